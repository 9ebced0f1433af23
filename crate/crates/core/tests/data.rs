mod common;

use common::*;
use essgan::data::{
    augment, elastic, elastic_field, flip_horizontal, load_dataset, make_phantom, open_dataset, phantom_dataset,
    read_slice, rotate, shift, write_png16, zoom, AugmentSpec, Batcher, Dataset, ManifestEntry, PhantomKind, Split,
};
use essgan::Image;
use proptest::prelude::*;

const KINDS: [PhantomKind; 3] = [PhantomKind::Ellipses, PhantomKind::Bars, PhantomKind::Blobs];

fn gradient_energy(img: &Image<f32>) -> f64 {
    let (h, w) = img.dims();
    let mut e = 0.0;
    for r in 0..h {
        for c in 0..w {
            let v = img.get(r, c) as f64;
            if r + 1 < h {
                e += (img.get(r + 1, c) as f64 - v).powi(2);
            }
            if c + 1 < w {
                e += (img.get(r, c + 1) as f64 - v).powi(2);
            }
        }
    }
    e
}

#[test]
fn phantoms_are_deterministic_bounded_and_have_edges() {
    for kind in KINDS {
        for seed in 0..100 {
            let p = make_phantom(kind, 32, seed).unwrap();
            assert!(p.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(gradient_energy(&p.image) > 0.0, "{kind:?} {seed}");
        }
        assert_eq!(make_phantom(kind, 64, 5).unwrap(), make_phantom(kind, 64, 5).unwrap());
        assert_ne!(
            make_phantom(kind, 64, 5).unwrap().image,
            make_phantom(kind, 64, 6).unwrap().image
        );
    }
    assert!(make_phantom(PhantomKind::Bars, 48, 0).is_err());
}

#[test]
fn zero_parameter_transforms_are_identities() {
    for kind in KINDS {
        let img = make_phantom(kind, 32, 3).unwrap().image;
        assert_eq!(augment(&img, &AugmentSpec::identity(), 9), img);
        assert_eq!(flip_horizontal(&flip_horizontal(&img)), img);
        assert_eq!(rotate(&img, 0.0), img);
        assert_eq!(shift(&img, 0.0, 0.0), img);
        assert_eq!(zoom(&img, 1.0), img);
        let (dy, dx) = elastic_field(32, 32, 0.0, 4.0, &mut rng(1));
        assert!(dy.iter().chain(&dx).all(|&v| v == 0.0));
        assert_eq!(elastic(&img, &dy, &dx), img);
        let zero_elastic = AugmentSpec {
            elastic_alpha: 0.0,
            ..AugmentSpec::identity()
        };
        assert_eq!(augment(&img, &zero_elastic, 4), img);
    }
}

#[test]
fn quarter_turn_rotation_permutes_pixels() {
    let img = make_phantom(PhantomKind::Bars, 16, 2).unwrap().image;
    let four = (0..4).fold(img.clone(), |acc, _| rotate(&acc, 90.0));
    for (a, b) in four.data().iter().zip(img.data()) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn elastic_field_has_zero_mean_per_axis() {
    let n = 200;
    let (mut my, mut mx) = (Vec::new(), Vec::new());
    for seed in 0..n {
        let (dy, dx) = elastic_field(32, 32, 2.0, 4.0, &mut rng(seed));
        my.push(dy.iter().sum::<f64>() / dy.len() as f64);
        mx.push(dx.iter().sum::<f64>() / dx.len() as f64);
        assert!(dy.iter().chain(&dx).all(|v| v.abs() <= 2.0 + 1e-12));
    }
    for means in [my, mx] {
        let m = means.iter().sum::<f64>() / n as f64;
        let sd = (means.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        assert!(m.abs() < 3.0 * sd / (n as f64).sqrt(), "mean {m}, sd {sd}");
    }
}

#[test]
fn default_augmentation_stays_in_range_and_is_seeded() {
    let img = make_phantom(PhantomKind::Ellipses, 32, 1).unwrap().image;
    let spec = AugmentSpec::default();
    let a = augment(&img, &spec, 3);
    assert_eq!(a, augment(&img, &spec, 3));
    assert_ne!(a, augment(&img, &spec, 4));
    assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
}

#[test]
fn layout_roundtrip_and_splits() {
    let ds = phantom_dataset(PhantomKind::Blobs, 16, [4, 2, 2], 10).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let entries = ds.write_layout(dir.path()).unwrap();
    assert_eq!(entries.len(), 8);
    let back = open_dataset(dir.path()).unwrap();
    assert_eq!(back.len(), 8);
    for (a, b) in back.records().iter().zip(ds.records()) {
        assert_eq!((&a.id, a.split), (&b.id, b.split));
        for (p, q) in a.image.data().iter().zip(b.image.data()) {
            assert!((p - q).abs() <= 0.5 / 65535.0 + 1e-7);
        }
    }
    assert_eq!(back.split(Split::Valid).len(), 2);
}

#[test]
fn untagged_slices_split_seventy_thirty_and_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let mut manifest = Vec::new();
    for i in 0..10 {
        let rec = make_phantom(PhantomKind::Ellipses, 8, i).unwrap();
        let rel = format!("s{i}.png");
        write_png16(&dir.path().join(&rel), &rec.image).unwrap();
        manifest.push(ManifestEntry {
            id: format!("s{i}"),
            path: rel.into(),
            split: None,
        });
    }
    let a = load_dataset(dir.path(), &manifest).unwrap();
    assert_eq!((a.split(Split::Train).len(), a.split(Split::Valid).len()), (7, 3));
    manifest.reverse();
    let b = load_dataset(dir.path(), &manifest).unwrap();
    assert_eq!(a, b);
    assert!(load_dataset(dir.path(), &[]).unwrap().is_empty());
}

#[test]
fn inconsistent_manifests_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let rec = make_phantom(PhantomKind::Bars, 8, 0).unwrap();
    write_png16(&dir.path().join("a.png"), &rec.image).unwrap();
    let entry = |id: &str, split| ManifestEntry {
        id: id.into(),
        path: "a.png".into(),
        split: Some(split),
    };
    let err = load_dataset(dir.path(), &[entry("x", Split::Train), entry("y", Split::Test)]).unwrap_err();
    assert!(err.to_string().contains("both"), "{err}");
    let err = load_dataset(dir.path(), &[entry("x", Split::Train), entry("x", Split::Train)]).unwrap_err();
    assert!(err.to_string().contains("duplicate"), "{err}");
    let missing = load_dataset(
        dir.path(),
        &[ManifestEntry {
            id: "m".into(),
            path: "nope.png".into(),
            split: None,
        }],
    );
    assert!(missing.is_err());
    image::GrayImage::new(8, 6).save(dir.path().join("odd.png")).unwrap();
    assert!(read_slice(&dir.path().join("odd.png")).is_err());
}

#[test]
fn dataset_rejects_out_of_range_values() {
    let mut rec = make_phantom(PhantomKind::Bars, 8, 0).unwrap();
    rec.image.data_mut()[0] = 1.5;
    assert!(Dataset::new(vec![rec]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batches_partition_every_epoch(len in 0usize..60, bs in 1usize..9, seed in any::<u64>(), epoch in 0u64..5) {
        let b = Batcher::new(len, bs, seed).unwrap();
        let batches = b.epoch(epoch);
        prop_assert!(batches.iter().all(|x| !x.is_empty() && x.len() <= bs));
        prop_assert_eq!(batches.len(), len.div_ceil(bs));
        let mut all = batches.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..len).collect::<Vec<_>>());
        prop_assert_eq!(b.epoch(epoch), batches);
    }
}
