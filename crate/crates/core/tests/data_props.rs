use std::collections::BTreeSet;

use aebound::data::*;
use aebound::Error;
use proptest::prelude::*;
use proptest::test_runner::FileFailurePersistence;

fn images_strategy() -> impl Strategy<Value = ImageSet> {
    (0usize..6, 1usize..5, 1usize..5).prop_flat_map(|(count, rows, cols)| {
        prop::collection::vec(any::<u8>(), count * rows * cols).prop_map(move |pixels| ImageSet {
            count,
            rows,
            cols,
            channels: 1,
            pixels,
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig {
        failure_persistence: Some(Box::new(FileFailurePersistence::WithSource("regressions"))),
        ..ProptestConfig::default()
    })]

    #[test]
    fn idx_images_round_trip(img in images_strategy()) {
        let bytes = write_idx_images(&img).unwrap();
        prop_assert_eq!(parse_idx(&bytes).unwrap(), IdxData::Images(img));
    }

    #[test]
    fn idx_labels_round_trip(labels in prop::collection::vec(any::<u8>(), 0..50)) {
        let bytes = write_idx_labels(&labels);
        prop_assert_eq!(parse_idx(&bytes).unwrap(), IdxData::Labels(labels));
    }

    #[test]
    fn aeb1_round_trip(img in images_strategy(), channels in 1usize..4) {
        let img = ImageSet {
            channels,
            pixels: img.pixels.iter().cycle().take(img.pixels.len() * channels).copied().collect(),
            ..img
        };
        prop_assert_eq!(parse_aeb1(&write_aeb1(&img)).unwrap(), img);
    }

    #[test]
    fn truncated_idx_rejected(img in images_strategy(), cut in 1usize..8) {
        let bytes = write_idx_images(&img).unwrap();
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(parse_idx(&bytes[..keep]).is_err());
    }

    #[test]
    fn binarize_is_idempotent(img in images_strategy(), t in 0.01f64..0.99) {
        let once = binarize(&img, t, None).unwrap();
        let again = binarize(&dataset_to_images(&once), t, None).unwrap();
        prop_assert_eq!(once.samples(), again.samples());
        for (s, i) in once.samples().iter().zip(0..) {
            for (v, p) in s.iter().zip(img.image(i)) {
                prop_assert_eq!(*v == 1.0, *p as f64 / 255.0 >= t);
            }
        }
    }

    #[test]
    fn split_is_disjoint_and_sized(n_lab in 0usize..20, m in 0usize..100, n_test in 0usize..50, seed in any::<u64>()) {
        let (data, _) = gen_clustered(ClusterSpec { clusters: 4, dim: 16, flips: 1, per_cluster: 50 }, 0).unwrap();
        let s = split(&data, SplitSpec { n_labeled: n_lab, m_unlabeled: m, n_test, seed }).unwrap();
        prop_assert_eq!((s.labeled.len(), s.unlabeled.len(), s.test.len()), (n_lab, m, n_test));
        let all: BTreeSet<usize> = s.labeled_idx.iter().chain(&s.unlabeled_idx).chain(&s.test_idx).copied().collect();
        prop_assert_eq!(all.len(), n_lab + m + n_test);
        for (k, &i) in s.unlabeled_idx.iter().enumerate() {
            prop_assert_eq!(&s.unlabeled.samples()[k], &data.samples()[i]);
        }
    }
}

#[test]
fn labeled_split_covers_every_class() {
    let (data, _) = gen_clustered(
        ClusterSpec {
            clusters: 7,
            dim: 32,
            flips: 2,
            per_cluster: 30,
        },
        5,
    )
    .unwrap();
    for seed in 0..100 {
        let s = split(
            &data,
            SplitSpec {
                n_labeled: 7,
                m_unlabeled: 50,
                n_test: 20,
                seed,
            },
        )
        .unwrap();
        let classes: BTreeSet<u32> = s.labeled.labels().unwrap().iter().copied().collect();
        assert_eq!(classes.len(), 7, "seed {seed}");
    }
}

#[test]
fn split_is_deterministic_and_seed_sensitive() {
    let (data, _) = gen_clustered(
        ClusterSpec {
            clusters: 3,
            dim: 16,
            flips: 1,
            per_cluster: 40,
        },
        1,
    )
    .unwrap();
    let spec = SplitSpec {
        n_labeled: 3,
        m_unlabeled: 60,
        n_test: 30,
        seed: 8,
    };
    assert_eq!(split(&data, spec).unwrap(), split(&data, spec).unwrap());
    assert_ne!(
        split(&data, spec).unwrap().unlabeled_idx,
        split(&data, SplitSpec { seed: 9, ..spec })
            .unwrap()
            .unlabeled_idx
    );
    assert!(split(
        &data,
        SplitSpec {
            m_unlabeled: 200,
            ..spec
        }
    )
    .is_err());
}

#[test]
fn generator_flips_exactly_and_separates_prototypes() {
    let spec = ClusterSpec {
        clusters: 4,
        dim: 20,
        flips: 2,
        per_cluster: 50,
    };
    let (data, truth) = gen_clustered(spec, 7).unwrap();
    assert_eq!(data.len(), 200);
    assert!(truth.min_prototype_hamming >= 4 * 2 + 2);
    for (x, &c) in data.samples().iter().zip(data.labels().unwrap()) {
        let proto = &truth.prototypes[c as usize];
        let diff = x
            .iter()
            .zip(proto)
            .filter(|(a, b)| **a != f64::from(**b))
            .count();
        assert_eq!(diff, 2);
    }
    assert_eq!(gen_clustered(spec, 7).unwrap().0, data);
}

#[test]
fn impossible_cluster_spec_rejected() {
    // pairwise distance 4·3+2 = 14 among 30 words of length 16 is beyond any code
    assert!(gen_clustered(
        ClusterSpec {
            clusters: 30,
            dim: 16,
            flips: 3,
            per_cluster: 1
        },
        0
    )
    .is_err());
}

#[test]
fn mismatched_label_file_reported() {
    let dir = tempfile::tempdir().unwrap();
    let img = ImageSet {
        count: 3,
        rows: 2,
        cols: 2,
        channels: 1,
        pixels: vec![200; 12],
    };
    let ip = dir.path().join("i.idx");
    let lp = dir.path().join("l.idx");
    std::fs::write(&ip, write_idx_images(&img).unwrap()).unwrap();
    std::fs::write(&lp, write_idx_labels(&[1, 2])).unwrap();
    let err = load_images_binarized(&ip, Some(&lp), 0.5, None).unwrap_err();
    assert!(matches!(
        err,
        Error::CountMismatch {
            images: 3,
            labels: 2
        }
    ));
    assert!(matches!(
        load_images_binarized(&dir.path().join("none.idx"), None, 0.5, None),
        Err(Error::MissingFile(_))
    ));
}

#[test]
fn colour_aeb1_loads_as_grayscale() {
    let dir = tempfile::tempdir().unwrap();
    // one 1x2 image: pixel 0 white, pixel 1 pure blue (luma 29)
    let img = ImageSet {
        count: 1,
        rows: 1,
        cols: 2,
        channels: 3,
        pixels: vec![255, 0, 255, 0, 255, 255],
    };
    let p = dir.path().join("c.aeb1");
    std::fs::write(&p, write_aeb1(&img)).unwrap();
    let d = load_images_binarized(&p, None, 0.5, None).unwrap();
    assert_eq!(d.samples(), &[vec![1.0, 0.0]]);
}
