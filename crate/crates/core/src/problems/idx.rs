//! Reader for the IDX format used by the MNIST distribution files.

use std::path::Path;

use super::dataset::Dataset;
use crate::error::{IdxError, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

fn read(path: &Path) -> std::result::Result<Vec<u8>, IdxError> {
    std::fs::read(path).map_err(|source| IdxError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn need(path: &Path, bytes: &[u8], needed: usize) -> std::result::Result<(), IdxError> {
    if bytes.len() < needed {
        return Err(IdxError::Truncated {
            path: path.to_path_buf(),
            needed,
            have: bytes.len(),
        });
    }
    Ok(())
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn check_magic(path: &Path, bytes: &[u8], expected: u32) -> std::result::Result<(), IdxError> {
    need(path, bytes, 4)?;
    let found = be_u32(bytes, 0);
    if found != expected {
        return Err(IdxError::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Loads an image/label file pair. Pixels are scaled from bytes to `[0, 1]`;
/// the class count is `max(10, max label + 1)`. At most `limit`
/// samples are kept.
pub fn load_idx_dataset(images_path: &Path, labels_path: &Path, limit: Option<usize>) -> Result<Dataset> {
    let img = read(images_path)?;
    let lbl = read(labels_path)?;
    check_magic(images_path, &img, IMAGES_MAGIC)?;
    check_magic(labels_path, &lbl, LABELS_MAGIC)?;
    need(images_path, &img, 16)?;
    need(labels_path, &lbl, 8)?;

    let n_img = be_u32(&img, 4) as usize;
    let (rows, cols) = (be_u32(&img, 8) as usize, be_u32(&img, 12) as usize);
    let n_lbl = be_u32(&lbl, 4) as usize;
    if n_img != n_lbl {
        return Err(IdxError::CountMismatch {
            images: n_img,
            labels: n_lbl,
        }
        .into());
    }
    let dim = rows * cols;
    need(images_path, &img, 16 + n_img * dim)?;
    need(labels_path, &lbl, 8 + n_lbl)?;

    let n = limit.map_or(n_img, |l| l.min(n_img));
    let labels = &lbl[8..8 + n];
    let num_classes = labels.iter().copied().max().map_or(1, |m| m as usize + 1).max(10);
    let pairs = (0..n)
        .map(|i| {
            let px = &img[16 + i * dim..16 + (i + 1) * dim];
            (px.iter().map(|&b| f64::from(b) / 255.0).collect(), labels[i] as usize)
        })
        .collect();
    Dataset::from_pairs(pairs, num_classes)
}

/// Serializes a dataset back to IDX bytes (pixels rounded to bytes). Used
/// to produce fixtures.
pub fn encode_idx(dataset: &Dataset, rows: usize, cols: usize) -> (Vec<u8>, Vec<u8>) {
    let n = dataset.len() as u32;
    let mut img = Vec::with_capacity(16 + dataset.len() * rows * cols);
    img.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    img.extend_from_slice(&n.to_be_bytes());
    img.extend_from_slice(&(rows as u32).to_be_bytes());
    img.extend_from_slice(&(cols as u32).to_be_bytes());
    let mut lbl = Vec::with_capacity(8 + dataset.len());
    lbl.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    lbl.extend_from_slice(&n.to_be_bytes());
    for s in dataset.samples() {
        img.extend(s.input.iter().map(|x| (x.clamp(0.0, 1.0) * 255.0).round() as u8));
        lbl.push(s.label as u8);
    }
    (img, lbl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    fn fixture(dir: &Path, n: usize) -> (std::path::PathBuf, std::path::PathBuf) {
        let pairs = (0..n)
            .map(|i| ((0..4).map(|p| ((i * 4 + p) % 256) as f64 / 255.0).collect(), i % 10))
            .collect();
        let d = Dataset::from_pairs(pairs, 10).unwrap();
        let (img, lbl) = encode_idx(&d, 2, 2);
        let (ip, lp) = (dir.join("img"), dir.join("lbl"));
        std::fs::write(&ip, img).unwrap();
        std::fs::write(&lp, lbl).unwrap();
        (ip, lp)
    }

    #[test]
    fn loads_scaled_pixels_with_limit() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path(), 12);
        let d = load_idx_dataset(&ip, &lp, Some(5)).unwrap();
        assert_eq!(d.len(), 5);
        assert_eq!(d.input_dim(), 4);
        assert_eq!(d.num_classes(), 10);
        assert_eq!(d.get(1).input, vec![4.0 / 255.0, 5.0 / 255.0, 6.0 / 255.0, 7.0 / 255.0]);
        assert_eq!(d.get(3).label, 3);
        assert_eq!(load_idx_dataset(&ip, &lp, Some(1000)).unwrap().len(), 12);
    }

    #[test]
    fn distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = fixture(dir.path(), 6);
        // swapped files: wrong magic
        assert!(matches!(
            load_idx_dataset(&lp, &ip, None),
            Err(Error::Idx(IdxError::BadMagic { .. }))
        ));
        let bytes = std::fs::read(&ip).unwrap();
        let short = dir.path().join("short");
        std::fs::write(&short, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(
            load_idx_dataset(&short, &lp, None),
            Err(Error::Idx(IdxError::Truncated { .. }))
        ));
        let (_, lp_other) = fixture(&{
            let sub = dir.path().join("b");
            std::fs::create_dir(&sub).unwrap();
            sub
        }, 7);
        assert!(matches!(
            load_idx_dataset(&ip, &lp_other, None),
            Err(Error::Idx(IdxError::CountMismatch { images: 6, labels: 7 }))
        ));
        assert!(matches!(
            load_idx_dataset(&dir.path().join("missing"), &lp, None),
            Err(Error::Idx(IdxError::Io { .. }))
        ));
    }
}
