//! IDX binary container: big-endian magic, big-endian u32 dimensions, raw
//! unsigned bytes. Images use magic 0x00000803 (3 dims) or, for multichannel
//! data, the standard 4-dim variant 0x00000804; labels use 0x00000801.

use std::fs;
use std::path::Path;

use super::{DataError, DigitCorpus, DomainData};
use crate::autodiff::Tensor;

pub const IMAGE_MAGIC_3D: u32 = 0x0000_0803;
pub const IMAGE_MAGIC_4D: u32 = 0x0000_0804;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

fn read_u32(bytes: &[u8], offset: usize) -> Result<u32, DataError> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(DataError::Format { offset, msg: format!("need 4 bytes, file has {}", bytes.len()) });
    }
    Ok(u32::from_be_bytes([bytes[offset], bytes[offset + 1], bytes[offset + 2], bytes[offset + 3]]))
}

/// Decoded image payload: packed bytes plus (count, channels, height, width).
#[derive(Debug)]
pub struct IdxImages {
    pub pixels: Vec<u8>,
    pub count: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

pub fn decode_images(bytes: &[u8]) -> Result<IdxImages, DataError> {
    let magic = read_u32(bytes, 0)?;
    let ndim = match magic {
        IMAGE_MAGIC_3D => 3,
        IMAGE_MAGIC_4D => 4,
        other => {
            return Err(DataError::Format { offset: 0, msg: format!("bad image magic {other:#010x}") });
        }
    };
    let mut dims = [1usize; 4];
    for (i, d) in dims.iter_mut().take(ndim).enumerate() {
        *d = read_u32(bytes, 4 + 4 * i)? as usize;
    }
    let (count, channels, height, width) = if ndim == 3 {
        (dims[0], 1, dims[1], dims[2])
    } else {
        (dims[0], dims[1], dims[2], dims[3])
    };
    let header = 4 + 4 * ndim;
    let want = count * channels * height * width;
    let body = &bytes[header.min(bytes.len())..];
    if body.len() != want {
        return Err(DataError::Format {
            offset: header,
            msg: format!("expected {want} pixel bytes, found {}", body.len()),
        });
    }
    Ok(IdxImages { pixels: body.to_vec(), count, channels, height, width })
}

pub fn decode_labels(bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    let magic = read_u32(bytes, 0)?;
    if magic != LABEL_MAGIC {
        return Err(DataError::Format { offset: 0, msg: format!("bad label magic {magic:#010x}") });
    }
    let count = read_u32(bytes, 4)? as usize;
    let body = &bytes[8.min(bytes.len())..];
    if body.len() != count {
        return Err(DataError::Format { offset: 8, msg: format!("expected {count} labels, found {}", body.len()) });
    }
    Ok(body.to_vec())
}

pub fn encode_images(pixels: &[u8], count: usize, channels: usize, height: usize, width: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(pixels.len() + 20);
    if channels == 1 {
        out.extend_from_slice(&IMAGE_MAGIC_3D.to_be_bytes());
        for d in [count, height, width] {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
    } else {
        out.extend_from_slice(&IMAGE_MAGIC_4D.to_be_bytes());
        for d in [count, channels, height, width] {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
    }
    out.extend_from_slice(pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(labels.len() + 8);
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Parses an image/label file pair into a [0, 1]-scaled tensor and labels.
pub fn load_idx(image_bytes: &[u8], label_bytes: &[u8]) -> Result<(Tensor, Vec<u8>), DataError> {
    let imgs = decode_images(image_bytes)?;
    let labels = decode_labels(label_bytes)?;
    if labels.len() != imgs.count {
        return Err(DataError::Format {
            offset: 4,
            msg: format!("{} images but {} labels", imgs.count, labels.len()),
        });
    }
    let data = imgs.pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let tensor = Tensor::new(vec![imgs.count, imgs.channels, imgs.height, imgs.width], data)
        .map_err(|e| DataError::Contract(e.to_string()))?;
    Ok((tensor, labels))
}

/// Pools the train and test portions of a raw MNIST directory.
pub fn load_mnist_dir(dir: &Path) -> Result<DigitCorpus, DataError> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (img_name, lbl_name) in [
        ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    ] {
        let img_path = dir.join(img_name);
        let lbl_path = dir.join(lbl_name);
        let img_bytes = fs::read(&img_path)
            .map_err(|e| DataError::Contract(format!("cannot read {}: {e}", img_path.display())))?;
        let lbl_bytes = fs::read(&lbl_path)
            .map_err(|e| DataError::Contract(format!("cannot read {}: {e}", lbl_path.display())))?;
        let imgs = decode_images(&img_bytes)?;
        let lbls = decode_labels(&lbl_bytes)?;
        if imgs.count != lbls.len() || imgs.channels != 1 || imgs.height != 28 || imgs.width != 28 {
            return Err(DataError::Contract(format!(
                "{img_name}: expected n x 1 x 28 x 28 with matching labels",
            )));
        }
        images.extend_from_slice(&imgs.pixels);
        labels.extend_from_slice(&lbls);
    }
    Ok(DigitCorpus { images, labels })
}

/// Caches one generated domain as an IDX pair under `dir`.
pub fn save_domain(dir: &Path, dataset: &str, index: usize, domain: &DomainData) -> Result<(), DataError> {
    fs::create_dir_all(dir)?;
    let (c, h, w) = domain.image_shape();
    let n = domain.len();
    let mut pixels = Vec::with_capacity(n * c * h * w);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        pixels.extend_from_slice(domain.image_bytes(i));
        labels.push(domain.label(i) as u8);
    }
    fs::write(dir.join(format!("{dataset}-env{index}-images-ubyte")), encode_images(&pixels, n, c, h, w))?;
    fs::write(dir.join(format!("{dataset}-env{index}-labels-ubyte")), encode_labels(&labels))?;
    Ok(())
}

/// Reads one cached domain back; inverse of `save_domain`.
pub fn load_domain(dir: &Path, dataset: &str, index: usize, name: &str) -> Result<DomainData, DataError> {
    let img_bytes = fs::read(dir.join(format!("{dataset}-env{index}-images-ubyte")))?;
    let lbl_bytes = fs::read(dir.join(format!("{dataset}-env{index}-labels-ubyte")))?;
    let imgs = decode_images(&img_bytes)?;
    let labels = decode_labels(&lbl_bytes)?;
    if labels.len() != imgs.count {
        return Err(DataError::Format {
            offset: 4,
            msg: format!("{} images but {} labels", imgs.count, labels.len()),
        });
    }
    DomainData::from_bytes(name, imgs.channels, imgs.height, imgs.width, imgs.pixels, labels)
}
