//! Writes a tiny IDX image/label pair, reads it back, and shows the
//! rejection of a file with the wrong magic number.

use fsg_lab::data::{encode_idx_images, encode_idx_labels, load_idx};

fn main() -> fsg_lab::Result<()> {
    let dir = std::env::temp_dir().join(format!("fsg-idx-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let (images, labels) = (dir.join("images.idx3"), dir.join("labels.idx1"));
    std::fs::write(&images, encode_idx_images(2, 2, 2, &[0, 255, 128, 64, 1, 2, 3, 4])?)?;
    std::fs::write(&labels, encode_idx_labels(&[3, 7]))?;

    let ds = load_idx(&images, &labels)?;
    println!("shape {:?}, labels {:?}, classes {}", ds.x.shape(), ds.labels, ds.classes);
    println!("first image {:?}", &ds.x.data()[..4]);

    match load_idx(&labels, &labels) {
        Err(e) => println!("swapped files: {e}"),
        Ok(_) => println!("swapped files unexpectedly loaded"),
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
