use std::fs;
use std::path::Path;

use cyclexplain::data::*;
use cyclexplain::image::{ImageTensor, RawImage};

fn write_raw(dir: &Path, name: &str, size: usize, value: f32) {
    RawImage { height: size, width: size, data: vec![value; size * size] }.write(&dir.join(name), None).unwrap();
}

fn manifest(dir: &Path, rows: &[&str]) -> std::path::PathBuf {
    let path = dir.join("manifest.csv");
    let mut text = String::from("id,path,label,median_rating,split\n");
    for r in rows {
        text.push_str(r);
        text.push('\n');
    }
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn synthetic_dataset_is_balanced_and_deterministic() {
    let a = generate_synthetic_dataset(100, 7, 64).unwrap();
    assert_eq!(a.samples.len(), 100);
    assert_eq!(a.samples.iter().filter(|s| s.label == 1).count(), 50);
    let b = generate_synthetic_dataset(100, 7, 64).unwrap();
    for (x, y) in a.samples.iter().zip(&b.samples) {
        assert_eq!(x.image.pixels(), y.image.pixels());
    }
    let c = generate_synthetic_dataset(100, 8, 64).unwrap();
    assert_ne!(a.samples[0].image.pixels(), c.samples[0].image.pixels());

    let small = generate_synthetic_dataset(2, 0, 16).unwrap();
    let diff = small.masks[0].inside.iter().zip(&small.masks[1].inside).filter(|(p, q)| p != q).count();
    assert!(diff >= 1);
    assert!(generate_synthetic_dataset(1, 0, 16).is_err());
    assert!(generate_synthetic_dataset(4, 0, 8).is_err());
}

#[test]
fn ratings_decide_labels_and_borderline_rows_are_dropped() {
    let dir = tempfile::tempdir().unwrap();
    for (i, v) in [0.1f32, 0.5, 0.9].iter().enumerate() {
        write_raw(dir.path(), &format!("{i}.f32"), 4, *v);
    }
    let path = manifest(dir.path(), &["a,0.f32,,2.0,", "b,1.f32,,3.0,", "c,2.f32,,4.5,"]);
    let (samples, summary) = load_manifest(&path, Some(4)).unwrap();
    assert_eq!(samples.len(), 2);
    assert_eq!(samples.iter().map(|s| s.label).collect::<Vec<_>>(), vec![0, 1]);
    assert_eq!(summary.n_total, 2);
    assert_eq!(summary.n_pos, 1);
    // dataset-wide min-max: 0.1 -> 0, 0.9 -> 1
    assert_eq!(samples[0].image.pixels()[0], 0.0);
    assert_eq!(samples[1].image.pixels()[0], 1.0);
}

#[test]
fn empty_manifest_gives_empty_result() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    fs::write(&path, "").unwrap();
    let (samples, summary) = load_manifest(&path, None).unwrap();
    assert!(samples.is_empty());
    assert_eq!(summary, DatasetSummary::default());
    let path = manifest(dir.path(), &[]);
    assert!(load_manifest(&path, None).unwrap().0.is_empty());
}

#[test]
fn manifest_errors_name_the_row() {
    let dir = tempfile::tempdir().unwrap();
    write_raw(dir.path(), "a.f32", 4, 0.2);
    write_raw(dir.path(), "b.f32", 8, 0.2);
    for (rows, needle) in [
        (vec!["a,a.f32,1,,", "b,b.f32,0,,"], "row 2"),
        (vec!["a,a.f32,1,,", "a,a.f32,0,,"], "row 2"),
        (vec!["a,missing.f32,1,,"], "row 1"),
        (vec!["a,a.f32,7,,"], "row 1"),
        (vec!["a,a.f32,1,,", "c,a.f32,0,x,"], "row 2"),
        (vec!["a,a.f32,1,,train", "c,a.f32,0,,valid"], "row 2"),
    ] {
        let path = manifest(dir.path(), &rows);
        let err = load_manifest(&path, None).unwrap_err().to_string();
        assert!(err.contains(needle), "{rows:?}: {err}");
    }
    let path = manifest(dir.path(), &["a,a.f32,1,,"]);
    assert!(load_manifest(&path, Some(8)).unwrap_err().to_string().contains("row 1"));
    let path = manifest(dir.path(), &["a,a.f32,1,,train", "c,a.f32,0,,"]);
    assert!(load_manifest(&path, None).is_err());
    fs::write(dir.path().join("manifest.csv"), "id,file,label\n").unwrap();
    assert!(load_manifest(&dir.path().join("manifest.csv"), None).is_err());
}

#[test]
fn manifest_splits_reproduce_published_counts() {
    let dir = tempfile::tempdir().unwrap();
    write_raw(dir.path(), "x.f32", 2, 0.5);
    let mut rows = Vec::new();
    for (label, train, test) in [(1, 236, 112), (0, 301, 123)] {
        for k in 0..train + test {
            let split = if k < train { "train" } else { "test" };
            rows.push(format!("l{label}_{k},x.f32,{label},,{split}"));
        }
    }
    let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
    let (_, s) = load_manifest(&manifest(dir.path(), &refs), None).unwrap();
    assert_eq!((s.n_total, s.n_pos, s.n_neg), (772, 348, 424));
    assert_eq!((s.n_train_pos, s.n_train_neg, s.n_test_pos, s.n_test_neg), (236, 301, 112, 123));
}

#[test]
fn png_inputs_load() {
    let dir = tempfile::tempdir().unwrap();
    ImageTensor::new(4, (0..16).map(|i| i as f32 / 15.0).collect()).unwrap().write_png(&dir.path().join("a.png")).unwrap();
    let path = manifest(dir.path(), &["a,a.png,1,,"]);
    let (s, _) = load_manifest(&path, Some(4)).unwrap();
    assert_eq!(s[0].image.get(3, 3), 1.0);
}

fn labelled(pos: usize, neg: usize) -> Vec<LabeledSample> {
    (0..pos + neg)
        .map(|i| LabeledSample {
            id: format!("s{i}"),
            image: ImageTensor::filled(4, 0.5).unwrap(),
            label: (i < pos) as u8,
            split: None,
            median_rating: None,
        })
        .collect()
}

#[test]
fn stratified_split_counts() {
    let mut s = labelled(10, 10);
    let sum = stratified_split(&mut s, 0.7, 1).unwrap();
    assert_eq!((sum.n_train_pos, sum.n_train_neg, sum.n_test_pos, sum.n_test_neg), (7, 7, 3, 3));

    let mut s = labelled(3, 7);
    let sum = stratified_split(&mut s, 0.7, 1).unwrap();
    assert_eq!((sum.n_train_pos, sum.n_train_neg), (2, 5));
    assert!(s.iter().all(|x| x.split.is_some()));

    let mut a = labelled(9, 11);
    let mut b = labelled(9, 11);
    stratified_split(&mut a, 0.5, 4).unwrap();
    stratified_split(&mut b, 0.5, 4).unwrap();
    assert_eq!(a, b);

    assert!(stratified_split(&mut labelled(0, 5), 0.7, 0).is_err());
    assert!(stratified_split(&mut labelled(5, 5), 1.0, 0).is_err());
}
