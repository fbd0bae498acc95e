use fsg_lab::data::{encode_idx_images, encode_idx_labels, load_idx, parse_idx_images, parse_idx_labels};
use fsg_lab::LabError;
use std::path::Path;

const P: &str = "fixture";

/// 1×2×2 image file written out byte by byte.
const ONE_IMAGE: [u8; 20] = [
    0x00, 0x00, 0x08, 0x03, // magic
    0x00, 0x00, 0x00, 0x01, // count
    0x00, 0x00, 0x00, 0x02, // rows
    0x00, 0x00, 0x00, 0x02, // cols
    0, 255, 128, 64,
];

#[test]
fn handcrafted_bytes_decode_exactly() {
    let x = parse_idx_images(&ONE_IMAGE, Path::new(P)).unwrap();
    assert_eq!(x.shape(), &[1, 1, 2, 2]);
    assert_eq!(x.data(), &[0.0, 1.0, 128.0 / 255.0, 64.0 / 255.0]);
}

#[test]
fn encoder_reproduces_the_fixture() {
    assert_eq!(encode_idx_images(1, 2, 2, &[0, 255, 128, 64]).unwrap(), ONE_IMAGE.to_vec());
    assert_eq!(encode_idx_labels(&[5]), vec![0, 0, 8, 1, 0, 0, 0, 1, 5]);
}

#[test]
fn every_mutated_magic_byte_is_rejected() {
    let labels = encode_idx_labels(&[1, 2, 3]);
    for i in 0..4 {
        for delta in [1u8, 0x80] {
            let mut img = ONE_IMAGE.to_vec();
            img[i] ^= delta;
            assert!(
                matches!(parse_idx_images(&img, Path::new(P)), Err(LabError::Format { .. })),
                "image byte {i} ^ {delta:#x}"
            );
            let mut lab = labels.clone();
            lab[i] ^= delta;
            assert!(
                matches!(parse_idx_labels(&lab, Path::new(P)), Err(LabError::Format { .. })),
                "label byte {i} ^ {delta:#x}"
            );
        }
    }
}

#[test]
fn wrong_magic_reports_what_was_found() {
    match parse_idx_images(&encode_idx_labels(&[1]), Path::new(P)) {
        Err(LabError::Format { expected, found, .. }) => assert_eq!((expected, found), (0x803, 0x801)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn truncation_at_every_length_is_an_error() {
    for len in 0..ONE_IMAGE.len() {
        assert!(parse_idx_images(&ONE_IMAGE[..len], Path::new(P)).is_err(), "len {len}");
    }
    let labels = encode_idx_labels(&[1, 2]);
    for len in 0..labels.len() {
        assert!(parse_idx_labels(&labels[..len], Path::new(P)).is_err(), "len {len}");
    }
}

#[test]
fn count_mismatch_between_files() {
    let dir = tempfile::tempdir().unwrap();
    let (i, l) = (dir.path().join("i"), dir.path().join("l"));
    std::fs::write(&i, encode_idx_images(2, 1, 1, &[1, 2]).unwrap()).unwrap();
    std::fs::write(&l, encode_idx_labels(&[0, 1, 1])).unwrap();
    assert!(matches!(load_idx(&i, &l), Err(LabError::Consistency(_))));
}

#[test]
fn idx_dataset_trains_through_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let pixels: Vec<u8> = (0..8 * 4).map(|k| if (k / 4) % 2 == 0 { 10 } else { 240 }).collect();
    let labels: Vec<u8> = (0..8).map(|k| (k % 2) as u8).collect();
    std::fs::write(dir.path().join("img.idx"), encode_idx_images(8, 2, 2, &pixels).unwrap()).unwrap();
    std::fs::write(dir.path().join("lab.idx"), encode_idx_labels(&labels)).unwrap();
    let text = r#"
[train]
epochs = 2
batch_size = 4
[dataset]
kind = "idx"
images = "img.idx"
labels = "lab.idx"
[model]
layers = [
  { kind = "flatten" },
  { kind = "dense", inputs = 4, outputs = 4, binarize = true },
  { kind = "relu" },
  { kind = "dense", inputs = 4, outputs = 2 },
]
"#;
    let cfg = fsg_lab::config::RunConfig::parse(text).unwrap();
    let splits = cfg.dataset.load(0, dir.path()).unwrap();
    assert_eq!(splits.train.sample_shape(), &[1, 2, 2]);
    let model = cfg.model.build(splits.train.sample_shape(), 0).unwrap();
    let mut t = fsg_lab::trainer::Trainer::new(cfg.train.clone(), model).unwrap();
    assert_eq!(t.fit(&splits.train, None).unwrap().len(), 2);
}
