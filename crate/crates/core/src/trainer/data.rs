use std::f64::consts::PI;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

/// Grayscale images in [0, 1] with digit labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// Flat `[n][channels][side][side]`.
    pub images: Vec<f64>,
    pub labels: Vec<u8>,
    pub channels: usize,
    pub side: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels(&self) -> usize {
        self.channels * self.side * self.side
    }

    pub fn image(&self, k: usize) -> &[f64] {
        let n = self.pixels();
        &self.images[k * n..(k + 1) * n]
    }

    /// First `n` samples (or all, if fewer).
    pub fn head(&self, n: usize) -> Dataset {
        let n = n.min(self.len());
        Dataset {
            images: self.images[..n * self.pixels()].to_vec(),
            labels: self.labels[..n].to_vec(),
            channels: self.channels,
            side: self.side,
        }
    }

    /// Every image resampled to `target × target`.
    pub fn resized(&self, target: usize) -> Result<Dataset> {
        if target > self.side || target == 0 {
            return Err(Error::InvalidArgument(format!(
                "cannot resize {0}×{0} images to {target}×{target}",
                self.side
            )));
        }
        let plane = self.side * self.side;
        let mut images = Vec::with_capacity(self.len() * self.channels * target * target);
        for k in 0..self.len() * self.channels {
            let src = &self.images[k * plane..(k + 1) * plane];
            images.extend(resize(src, self.side, target));
        }
        Ok(Dataset {
            images,
            labels: self.labels.clone(),
            channels: self.channels,
            side: target,
        })
    }

    /// Input voltages for sample `k`.
    pub fn voltages(&self, k: usize) -> Vec<f64> {
        self.image(k).iter().map(|&p| to_voltage(p)).collect()
    }
}

/// Pixel intensity to input voltage, mapping [0, 1] onto [−0.1, 0.1] V.
pub fn to_voltage(pixel: f64) -> f64 {
    0.2 * pixel - 0.1
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("{}: bad gzip stream: {e}", path.display())))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format(format!("{}: truncated header", path.display())))
}

/// Parse an IDX image file and its label file (either may be gzipped).
pub fn load_idx(images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Dataset> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let ib = read_maybe_gz(ip)?;
    let lb = read_maybe_gz(lp)?;

    let magic = be_u32(&ib, 0, ip)?;
    if magic != IMAGE_MAGIC {
        return Err(Error::Format(format!(
            "{}: image magic {magic:#010x}, expected {IMAGE_MAGIC:#010x}",
            ip.display()
        )));
    }
    let n = be_u32(&ib, 4, ip)? as usize;
    let rows = be_u32(&ib, 8, ip)? as usize;
    let cols = be_u32(&ib, 12, ip)? as usize;
    if rows != cols || rows == 0 {
        return Err(Error::Format(format!(
            "{}: expected square images, got {rows}×{cols}",
            ip.display()
        )));
    }
    let payload = &ib[16..];
    if payload.len() != n * rows * cols {
        return Err(Error::Format(format!(
            "{}: header promises {} bytes of pixels, file holds {}",
            ip.display(),
            n * rows * cols,
            payload.len()
        )));
    }

    let magic = be_u32(&lb, 0, lp)?;
    if magic != LABEL_MAGIC {
        return Err(Error::Format(format!(
            "{}: label magic {magic:#010x}, expected {LABEL_MAGIC:#010x}",
            lp.display()
        )));
    }
    let m = be_u32(&lb, 4, lp)? as usize;
    let label_bytes = &lb[8..];
    if label_bytes.len() != m {
        return Err(Error::Format(format!(
            "{}: header promises {m} labels, file holds {}",
            lp.display(),
            label_bytes.len()
        )));
    }
    if m != n {
        return Err(Error::Format(format!(
            "{n} images but {m} labels ({} / {})",
            ip.display(),
            lp.display()
        )));
    }
    if let Some(k) = label_bytes.iter().position(|&l| l > 9) {
        return Err(Error::Format(format!(
            "{}: label {} at index {k} is not a digit",
            lp.display(),
            label_bytes[k]
        )));
    }
    Ok(Dataset {
        images: payload.iter().map(|&b| b as f64 / 255.0).collect(),
        labels: label_bytes.to_vec(),
        channels: 1,
        side: rows,
    })
}

/// Write an uncompressed IDX pair (used for fixtures and exports).
pub fn write_idx(ds: &Dataset, images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
    let (ip, lp) = (images.as_ref(), labels.as_ref());
    let mut ib = Vec::with_capacity(16 + ds.images.len());
    for x in [IMAGE_MAGIC, ds.len() as u32, ds.side as u32, ds.side as u32] {
        ib.extend(x.to_be_bytes());
    }
    ib.extend(
        ds.images
            .iter()
            .map(|&p| (p.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    let mut lb = Vec::with_capacity(8 + ds.len());
    for x in [LABEL_MAGIC, ds.len() as u32] {
        lb.extend(x.to_be_bytes());
    }
    lb.extend(&ds.labels);
    std::fs::write(ip, ib).map_err(|e| Error::io(ip, e))?;
    std::fs::write(lp, lb).map_err(|e| Error::io(lp, e))
}

const LANCZOS_A: f64 = 3.0;

pub fn lanczos3(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else if x.abs() < LANCZOS_A {
        let px = PI * x;
        LANCZOS_A * px.sin() * (px / LANCZOS_A).sin() / (px * px)
    } else {
        0.0
    }
}

/// Normalized 1-D resampling weights: for every output index, the first
/// contributing source index and its weights. When shrinking, the kernel is
/// stretched by the scale factor so it low-passes before decimation.
pub fn lanczos_weights(src: usize, dst: usize) -> Vec<(usize, Vec<f64>)> {
    let scale = src as f64 / dst as f64;
    let support = LANCZOS_A * scale.max(1.0);
    let stretch = scale.max(1.0);
    (0..dst)
        .map(|o| {
            let center = (o as f64 + 0.5) * scale;
            let lo = ((center - support).floor().max(0.0)) as usize;
            let hi = ((center + support).ceil() as usize).min(src);
            let mut w: Vec<f64> = (lo..hi)
                .map(|j| lanczos3((j as f64 + 0.5 - center) / stretch))
                .collect();
            let sum: f64 = w.iter().sum();
            for x in &mut w {
                *x /= sum;
            }
            (lo, w)
        })
        .collect()
}

/// Separable Lanczos-3 resampling of a square image, clamped to [0, 1].
pub fn resize(image: &[f64], side: usize, target: usize) -> Vec<f64> {
    let wts = lanczos_weights(side, target);
    // rows first: side × target
    let mut tmp = vec![0.0; side * target];
    for r in 0..side {
        for (c, (lo, w)) in wts.iter().enumerate() {
            tmp[r * target + c] = w
                .iter()
                .enumerate()
                .map(|(k, x)| x * image[r * side + lo + k])
                .sum();
        }
    }
    let mut out = vec![0.0; target * target];
    for (r, (lo, w)) in wts.iter().enumerate() {
        for c in 0..target {
            let v: f64 = w
                .iter()
                .enumerate()
                .map(|(k, x)| x * tmp[(lo + k) * target + c])
                .sum();
            out[r * target + c] = v.clamp(0.0, 1.0);
        }
    }
    out
}
