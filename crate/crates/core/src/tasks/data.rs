//! Synthetic segmentation data and its on-disk layout.
//!
//! A dataset directory holds `manifest.toml` plus one `img_NNNN.bin` and one
//! `lbl_NNNN.bin` per sample. Image files are `MSNI`, a little-endian `u32`
//! version, four `u32` dimensions and `f64` values; label files are `MSNL`,
//! version, height, width and one byte per pixel.

use std::fs;
use std::io::Read as _;
use std::path::Path;
use std::rc::Rc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng::{stream, Purpose};

pub const DATASET_FORMAT_VERSION: u32 = 1;
/// Name of the manifest inside a dataset directory.
pub const MANIFEST_FILE: &str = "manifest.toml";
const IMAGE_MAGIC: &[u8; 4] = b"MSNI";
const LABEL_MAGIC: &[u8; 4] = b"MSNL";

/// One image with its per-pixel class map (row-major, `h * w` entries).
#[derive(Clone, Debug, PartialEq)]
pub struct SegSample {
    pub image: Tensor,
    pub label: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegDataset {
    pub num_classes: usize,
    pub channels: usize,
    pub size: usize,
    pub samples: Vec<SegSample>,
}

impl SegDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Stacks the listed samples into one `[n, c, h, w]` batch plus flat labels.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Rc<[u8]>)> {
        if indices.is_empty() {
            return Err(Error::invalid("empty batch"));
        }
        let (c, s) = (self.channels, self.size);
        let mut data = Vec::with_capacity(indices.len() * c * s * s);
        let mut labels = Vec::with_capacity(indices.len() * s * s);
        for &i in indices {
            let sample = self
                .samples
                .get(i)
                .ok_or_else(|| Error::invalid(format!("sample {i} out of range ({} samples)", self.len())))?;
            data.extend_from_slice(sample.image.data());
            labels.extend_from_slice(&sample.label);
        }
        Ok((Tensor::from_vec([indices.len(), c, s, s], data)?, labels.into()))
    }

    pub fn subset(&self, indices: &[usize]) -> SegDataset {
        SegDataset {
            num_classes: self.num_classes,
            channels: self.channels,
            size: self.size,
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.samples.iter().enumerate() {
            if s.image.shape() != [1, self.channels, self.size, self.size] || s.label.len() != self.size * self.size {
                return Err(Error::format("dataset", format!("sample {i} has inconsistent shape")));
            }
            if let Some(&bad) = s.label.iter().find(|&&l| l as usize >= self.num_classes) {
                return Err(Error::ClassOutOfRange {
                    class: bad as usize,
                    num_classes: self.num_classes,
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub count: usize,
    pub size: usize,
    pub num_classes: usize,
    /// Standard deviation of the additive Gaussian noise.
    pub noise: f64,
}

/// Mean intensity of class `c`; classes are spread evenly over `[0.1, 0.9]`.
pub fn class_intensity(c: usize, num_classes: usize) -> f64 {
    0.1 + 0.8 * c as f64 / (num_classes - 1) as f64
}

/// Minimum visible pixels of every foreground region.
pub const MIN_REGION_PIXELS: usize = 4;

#[derive(Clone, Copy, Debug)]
enum Shape {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64 },
    Rect { y0: usize, x0: usize, y1: usize, x1: usize },
}

impl Shape {
    fn contains(&self, y: usize, x: usize) -> bool {
        match *self {
            Shape::Ellipse { cy, cx, ry, rx } => {
                let dy = (y as f64 + 0.5 - cy) / ry;
                let dx = (x as f64 + 0.5 - cx) / rx;
                dy * dy + dx * dx <= 1.0
            }
            Shape::Rect { y0, x0, y1, x1 } => (y0..y1).contains(&y) && (x0..x1).contains(&x),
        }
    }

    fn random(rng: &mut impl Rng, size: usize) -> Shape {
        let s = size as f64;
        let lo = (s / 8.0).max(1.5);
        let hi = (s / 4.0).max(lo + 0.5);
        if rng.gen_bool(0.5) {
            let ry = rng.gen_range(lo..hi);
            let rx = rng.gen_range(lo..hi);
            Shape::Ellipse {
                cy: rng.gen_range(ry..s - ry),
                cx: rng.gen_range(rx..s - rx),
                ry,
                rx,
            }
        } else {
            let h = rng.gen_range(lo..hi).round() as usize * 2;
            let w = rng.gen_range(lo..hi).round() as usize * 2;
            let (h, w) = (h.min(size), w.min(size));
            let y0 = rng.gen_range(0..=size - h);
            let x0 = rng.gen_range(0..=size - w);
            Shape::Rect {
                y0,
                x0,
                y1: y0 + h,
                x1: x0 + w,
            }
        }
    }
}

const MAX_LAYOUT_ATTEMPTS: usize = 1000;

fn synth_label(rng: &mut impl Rng, size: usize, num_classes: usize) -> Result<Vec<u8>> {
    'retry: for _ in 0..MAX_LAYOUT_ATTEMPTS {
        let mut label = vec![0u8; size * size];
        for c in 1..num_classes {
            let shape = Shape::random(rng, size);
            for y in 0..size {
                for x in 0..size {
                    if shape.contains(y, x) {
                        label[y * size + x] = c as u8;
                    }
                }
            }
        }
        // later classes may cover earlier ones; every class must stay visible
        for c in 0..num_classes {
            if label.iter().filter(|&&l| l as usize == c).count() < MIN_REGION_PIXELS {
                continue 'retry;
            }
        }
        return Ok(label);
    }
    Err(Error::invalid(format!(
        "could not place {} visible regions on a {size}x{size} image",
        num_classes - 1
    )))
}

/// Single-channel images of randomly placed ellipses and rectangles, one per
/// foreground class, with class-specific intensity plus Gaussian noise.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<SegDataset> {
    if cfg.num_classes < 2 || cfg.num_classes > u8::MAX as usize {
        return Err(Error::invalid(format!("num_classes must be in 2..=255 (got {})", cfg.num_classes)));
    }
    if cfg.size < 8 {
        return Err(Error::invalid(format!("image size {} is too small", cfg.size)));
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return Err(Error::invalid(format!("noise must be finite and non-negative (got {})", cfg.noise)));
    }
    let mut shape_rng: ChaCha8Rng = stream(cfg.seed, Purpose::Data);
    let mut noise_rng: ChaCha8Rng = stream(cfg.seed, Purpose::Noise);
    let noise = Normal::new(0.0, cfg.noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let samples = (0..cfg.count)
        .map(|_| {
            let label = synth_label(&mut shape_rng, cfg.size, cfg.num_classes)?;
            let data = label
                .iter()
                .map(|&l| {
                    let v = class_intensity(l as usize, cfg.num_classes);
                    if cfg.noise > 0.0 {
                        v + noise.sample(&mut noise_rng)
                    } else {
                        v
                    }
                })
                .collect();
            Ok(SegSample {
                image: Tensor::from_vec([1, 1, cfg.size, cfg.size], data)?,
                label,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SegDataset {
        num_classes: cfg.num_classes,
        channels: 1,
        size: cfg.size,
        samples,
    })
}

/// Nearest-intensity classifier; an oracle for the zero-noise case.
pub fn threshold_segment(image: &Tensor, num_classes: usize) -> Vec<u8> {
    image
        .data()
        .iter()
        .map(|&v| {
            (0..num_classes)
                .min_by(|&a, &b| {
                    let da = (v - class_intensity(a, num_classes)).abs();
                    let db = (v - class_intensity(b, num_classes)).abs();
                    da.total_cmp(&db)
                })
                .unwrap() as u8
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub count: usize,
    pub size: usize,
    pub channels: usize,
    pub num_classes: usize,
    /// Generator settings, when the data is synthetic.
    pub synth: Option<SynthConfig>,
    pub images: Vec<String>,
    pub labels: Vec<String>,
}

fn image_bytes(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(24 + t.len() * 8);
    out.extend_from_slice(IMAGE_MAGIC);
    out.extend_from_slice(&DATASET_FORMAT_VERSION.to_le_bytes());
    for d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn label_bytes(label: &[u8], size: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + label.len());
    out.extend_from_slice(LABEL_MAGIC);
    out.extend_from_slice(&DATASET_FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(size as u32).to_le_bytes());
    out.extend_from_slice(&(size as u32).to_le_bytes());
    out.extend_from_slice(label);
    out
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes the dataset directory, creating it if needed.
pub fn save_dataset(ds: &SegDataset, dir: &Path, synth: Option<&SynthConfig>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for (i, s) in ds.samples.iter().enumerate() {
        let img = format!("img_{i:04}.bin");
        let lbl = format!("lbl_{i:04}.bin");
        write(&dir.join(&img), &image_bytes(&s.image))?;
        write(&dir.join(&lbl), &label_bytes(&s.label, ds.size))?;
        images.push(img);
        labels.push(lbl);
    }
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        count: ds.len(),
        size: ds.size,
        channels: ds.channels,
        num_classes: ds.num_classes,
        synth: synth.cloned(),
        images,
        labels,
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::format("dataset manifest", e.to_string()))?;
    write(&dir.join(MANIFEST_FILE), text.as_bytes())
}

struct Reader<'a> {
    what: &'static str,
    bytes: &'a [u8],
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() < n {
            return Err(Error::format(self.what, "truncated file"));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::format(self.what, "bad magic bytes"));
        }
        let version = self.u32()?;
        if version != DATASET_FORMAT_VERSION {
            return Err(Error::FormatVersion {
                what: self.what,
                found: version,
                expected: DATASET_FORMAT_VERSION,
            });
        }
        Ok(())
    }
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    f.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

fn parse_image(bytes: &[u8]) -> Result<Tensor> {
    let mut r = Reader { what: "image file", bytes };
    r.header(IMAGE_MAGIC)?;
    let mut shape = [0usize; 4];
    for d in shape.iter_mut() {
        *d = r.u32()? as usize;
    }
    let n: usize = shape.iter().product();
    let raw = r.take(n * 8)?;
    let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    if !r.bytes.is_empty() {
        return Err(Error::format("image file", "trailing bytes"));
    }
    Tensor::from_vec(shape, data)
}

fn parse_label(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut r = Reader { what: "label file", bytes };
    r.header(LABEL_MAGIC)?;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let data = r.take(h * w)?.to_vec();
    if !r.bytes.is_empty() {
        return Err(Error::format("label file", "trailing bytes"));
    }
    Ok((h, w, data))
}

pub fn load_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let value: toml::Value = text
        .parse()
        .map_err(|e: toml::de::Error| Error::format("dataset manifest", e.to_string()))?;
    let version = value.get("format_version").and_then(|v| v.as_integer()).unwrap_or(-1);
    if version != DATASET_FORMAT_VERSION as i64 {
        return Err(Error::FormatVersion {
            what: "dataset manifest",
            found: version.max(0) as u32,
            expected: DATASET_FORMAT_VERSION,
        });
    }
    toml::from_str(&text).map_err(|e| Error::format("dataset manifest", e.to_string()))
}

pub fn load_dataset(dir: &Path) -> Result<SegDataset> {
    let m = load_manifest(dir)?;
    if m.images.len() != m.count || m.labels.len() != m.count {
        return Err(Error::format(
            "dataset manifest",
            format!("count {} but {} images and {} labels listed", m.count, m.images.len(), m.labels.len()),
        ));
    }
    let mut samples = Vec::with_capacity(m.count);
    for (img, lbl) in m.images.iter().zip(&m.labels) {
        let image = parse_image(&read_all(&dir.join(img))?)?;
        let (h, w, label) = parse_label(&read_all(&dir.join(lbl))?)?;
        if h != m.size || w != m.size {
            return Err(Error::format("label file", format!("{lbl} is {h}x{w}, manifest says {}", m.size)));
        }
        samples.push(SegSample { image, label });
    }
    let ds = SegDataset {
        num_classes: m.num_classes,
        channels: m.channels,
        size: m.size,
        samples,
    };
    ds.validate()?;
    Ok(ds)
}

/// Seeded permutation of `0..n`.
pub fn shuffled(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}
