//! File formats.
//!
//! * Tensors and superpixel maps use the `SPT1` binary layout:
//!
//!   | bytes        | content                                          |
//!   |--------------|--------------------------------------------------|
//!   | 4            | magic `SPT1`                                     |
//!   | 1            | dtype: 1 = `f32`, 2 = `u32`                      |
//!   | 1            | rank                                             |
//!   | 2            | zero padding                                     |
//!   | 8 × rank     | dims, `u64` little-endian                        |
//!   | remainder    | payload, row-major, little-endian                |
//!
//! * Images are 8-bit RGB and label maps 8- or 16-bit grayscale, written as
//!   PNM (`.ppm`/`.pgm`) or PNG depending on the extension.
//! * Configs, edge lists, pooled features, instance sets and metric reports
//!   are JSON.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, ImageFormat, Luma, Rgb, RgbImage};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::partition::SuperpixelMap;
use crate::types::{Instance, InstanceSet, LabelMap, Tensor};

pub const TENSOR_MAGIC: &[u8; 4] = b"SPT1";
const HEADER_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U32(Vec<u32>),
}

impl TensorData {
    fn code(&self) -> u8 {
        match self {
            TensorData::F32(_) => 1,
            TensorData::U32(_) => 2,
        }
    }

    fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U32(v) => v.len(),
        }
    }
}

/// Any `SPT1` payload: dims plus typed data.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTensor {
    pub dims: Vec<u64>,
    pub data: TensorData,
}

impl RawTensor {
    pub fn new(dims: Vec<u64>, data: TensorData) -> Result<Self> {
        if dims.len() > u8::MAX as usize {
            return Err(Error::invalid(format!("rank {} too large", dims.len())));
        }
        let n = element_count(&dims)?;
        if n != data.len() {
            return Err(Error::shape(format!("dims {dims:?} need {n} elements, got {}", data.len())));
        }
        Ok(Self { dims, data })
    }
}

fn element_count(dims: &[u64]) -> Result<usize> {
    dims.iter()
        .try_fold(1u64, |acc, &d| acc.checked_mul(d))
        .and_then(|n| usize::try_from(n).ok())
        .ok_or_else(|| Error::Malformed(format!("dims {dims:?} overflow")))
}

pub fn encode_tensor(t: &RawTensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * t.dims.len() + 4 * t.data.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(t.data.code());
    out.push(t.dims.len() as u8);
    out.extend_from_slice(&[0, 0]);
    for d in &t.dims {
        out.extend_from_slice(&d.to_le_bytes());
    }
    match &t.data {
        TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<RawTensor> {
    if bytes.len() < 4 || &bytes[..4] != TENSOR_MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Malformed("truncated header".into()));
    }
    let dtype = bytes[4];
    if dtype != 1 && dtype != 2 {
        return Err(Error::UnknownDtype(dtype));
    }
    let rank = bytes[5] as usize;
    if bytes[6] != 0 || bytes[7] != 0 {
        return Err(Error::Malformed("non-zero header padding".into()));
    }
    let dims_end = HEADER_LEN + 8 * rank;
    if bytes.len() < dims_end {
        return Err(Error::Malformed("truncated dims".into()));
    }
    let dims: Vec<u64> = bytes[HEADER_LEN..dims_end]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let n = element_count(&dims)?;
    let payload = &bytes[dims_end..];
    let expected = n.checked_mul(4).ok_or_else(|| Error::Malformed("payload size overflow".into()))?;
    if payload.len() != expected {
        return Err(Error::TruncatedPayload { expected, found: payload.len() });
    }
    let words = payload.chunks_exact(4).map(|c| <[u8; 4]>::try_from(c).expect("4-byte chunk"));
    let data = match dtype {
        1 => TensorData::F32(words.map(f32::from_le_bytes).collect()),
        _ => TensorData::U32(words.map(u32::from_le_bytes).collect()),
    };
    Ok(RawTensor { dims, data })
}

pub fn read_raw_tensor(path: impl AsRef<Path>) -> Result<RawTensor> {
    decode_tensor(&fs::read(path)?)
}

pub fn write_raw_tensor(path: impl AsRef<Path>, t: &RawTensor) -> Result<()> {
    fs::write(path, encode_tensor(t))?;
    Ok(())
}

impl From<&Tensor> for RawTensor {
    fn from(t: &Tensor) -> Self {
        let (k, m, n) = t.shape();
        RawTensor { dims: vec![k as u64, m as u64, n as u64], data: TensorData::F32(t.data().to_vec()) }
    }
}

impl TryFrom<RawTensor> for Tensor {
    type Error = Error;

    /// Accepts rank-3 `f32` data, or rank 2 as a single channel.
    fn try_from(raw: RawTensor) -> Result<Self> {
        let TensorData::F32(data) = raw.data else {
            return Err(Error::invalid("expected an f32 tensor"));
        };
        let d: Vec<usize> = raw.dims.iter().map(|&d| d as usize).collect();
        match *d.as_slice() {
            [k, m, n] => Tensor::new(k, m, n, data),
            [m, n] => Tensor::new(1, m, n, data),
            _ => Err(Error::invalid(format!("expected a rank-2 or rank-3 tensor, got rank {}", d.len()))),
        }
    }
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    read_raw_tensor(path)?.try_into()
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    write_raw_tensor(path, &RawTensor::from(tensor))
}

impl From<&SuperpixelMap> for RawTensor {
    fn from(sp: &SuperpixelMap) -> Self {
        RawTensor { dims: vec![sp.rows() as u64, sp.cols() as u64], data: TensorData::U32(sp.ids().to_vec()) }
    }
}

/// Reads a rank-2 `u32` map; the count is `max id + 1` and the partition is
/// validated.
pub fn read_superpixels(path: impl AsRef<Path>) -> Result<SuperpixelMap> {
    let raw = read_raw_tensor(path)?;
    let TensorData::U32(ids) = raw.data else {
        return Err(Error::invalid("superpixel map must be a u32 tensor"));
    };
    let &[rows, cols] = raw.dims.as_slice() else {
        return Err(Error::invalid("superpixel map must be rank 2"));
    };
    let sp = SuperpixelMap::from_ids(rows as usize, cols as usize, ids)?;
    SuperpixelMap::validated(sp.rows(), sp.cols(), sp.ids().to_vec(), sp.count())
}

pub fn write_superpixels(path: impl AsRef<Path>, sp: &SuperpixelMap) -> Result<()> {
    write_raw_tensor(path, &RawTensor::from(sp))
}

pub fn read_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    Ok(image::open(path)?.to_rgb8())
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    match ImageFormat::from_path(path) {
        Ok(f @ (ImageFormat::Png | ImageFormat::Pnm)) => Ok(f),
        _ => Err(Error::invalid(format!("{}: raster outputs must be .png, .ppm or .pgm", path.display()))),
    }
}

fn encode_image(img: &DynamicImage, format: ImageFormat) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, format)?;
    Ok(out.into_inner())
}

/// Encodes an RGB image in the format named by `path`'s extension.
pub fn rgb_bytes(path: impl AsRef<Path>, img: &RgbImage) -> Result<Vec<u8>> {
    encode_image(&DynamicImage::ImageRgb8(img.clone()), format_for(path.as_ref())?)
}

pub fn write_rgb(path: impl AsRef<Path>, img: &RgbImage) -> Result<()> {
    fs::write(path.as_ref(), rgb_bytes(path.as_ref(), img)?)?;
    Ok(())
}

/// Reads a grayscale label map; every value must be below `num_labels`.
pub fn read_label_map(path: impl AsRef<Path>, num_labels: usize) -> Result<LabelMap> {
    let img = image::open(path)?;
    let (cols, rows) = (img.width() as usize, img.height() as usize);
    let labels: Vec<u32> = match img {
        DynamicImage::ImageLuma8(g) => g.into_raw().into_iter().map(u32::from).collect(),
        DynamicImage::ImageLuma16(g) => g.into_raw().into_iter().map(u32::from).collect(),
        _ => return Err(Error::invalid("label map must be single-channel grayscale")),
    };
    LabelMap::new(rows, cols, num_labels, labels)
}

/// Encodes a label map as 8-bit grayscale when the label count fits, 16-bit
/// otherwise.
pub fn label_map_bytes(path: impl AsRef<Path>, labels: &LabelMap) -> Result<Vec<u8>> {
    let format = format_for(path.as_ref())?;
    let (w, h) = (labels.cols() as u32, labels.rows() as u32);
    let img = if labels.num_labels() <= 256 {
        let raw = labels.labels().iter().map(|&l| l as u8).collect();
        DynamicImage::ImageLuma8(GrayImage::from_raw(w, h, raw).expect("buffer size"))
    } else if labels.num_labels() <= 65536 {
        let raw = labels.labels().iter().map(|&l| l as u16).collect();
        DynamicImage::ImageLuma16(ImageBuffer::<Luma<u16>, Vec<u16>>::from_raw(w, h, raw).expect("buffer size"))
    } else {
        return Err(Error::invalid("label maps support at most 65536 labels"));
    };
    encode_image(&img, format)
}

pub fn write_label_map(path: impl AsRef<Path>, labels: &LabelMap) -> Result<()> {
    fs::write(path.as_ref(), label_map_bytes(path.as_ref(), labels)?)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    fs::write(path, to_json_bytes(value)?)?;
    Ok(())
}

/// JSON form of an [`InstanceSet`]: masks as run-lengths over the row-major
/// flattened image, `[start, length]` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSetDoc {
    pub rows: usize,
    pub cols: usize,
    pub instances: Vec<InstanceDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDoc {
    pub class: u32,
    pub score: f64,
    pub runs: Vec<[usize; 2]>,
}

impl From<&InstanceSet> for InstanceSetDoc {
    fn from(set: &InstanceSet) -> Self {
        let instances = set
            .instances()
            .iter()
            .map(|inst| {
                let mut runs: Vec<[usize; 2]> = Vec::new();
                for (p, &on) in inst.mask.iter().enumerate() {
                    if !on {
                        continue;
                    }
                    match runs.last_mut() {
                        Some(run) if run[0] + run[1] == p => run[1] += 1,
                        _ => runs.push([p, 1]),
                    }
                }
                InstanceDoc { class: inst.class, score: inst.score, runs }
            })
            .collect();
        Self { rows: set.rows(), cols: set.cols(), instances }
    }
}

impl TryFrom<InstanceSetDoc> for InstanceSet {
    type Error = Error;

    fn try_from(doc: InstanceSetDoc) -> Result<Self> {
        let n = doc.rows * doc.cols;
        let mut out = Vec::with_capacity(doc.instances.len());
        for (idx, inst) in doc.instances.into_iter().enumerate() {
            let mut mask = vec![false; n];
            for [start, len] in inst.runs {
                let end = start.checked_add(len).filter(|&e| e <= n).ok_or_else(|| {
                    Error::Malformed(format!("instance {idx} run [{start}, {len}] outside the image"))
                })?;
                mask[start..end].iter_mut().for_each(|m| *m = true);
            }
            out.push(Instance { mask, class: inst.class, score: inst.score });
        }
        InstanceSet::new(doc.rows, doc.cols, out)
    }
}

pub fn read_instances(path: impl AsRef<Path>) -> Result<InstanceSet> {
    read_json::<InstanceSetDoc>(path)?.try_into()
}

pub fn write_instances(path: impl AsRef<Path>, set: &InstanceSet) -> Result<()> {
    write_json(path, &InstanceSetDoc::from(set))
}

/// The PASCAL VOC colour map: label bits spread over the high bits of the
/// three channels. Injective over 256 labels; label 0 is black.
pub fn default_palette(n: usize) -> Vec<[u8; 3]> {
    (0..n)
        .map(|label| {
            let mut c = [0u8; 3];
            let mut id = label;
            for shift in (0..8).rev() {
                for (ch, v) in c.iter_mut().enumerate() {
                    *v |= (((id >> ch) & 1) as u8) << shift;
                }
                id >>= 3;
            }
            c
        })
        .collect()
}

/// Paints each pixel with its label's palette colour.
pub fn colorize(labels: &LabelMap, palette: &[[u8; 3]]) -> Result<RgbImage> {
    if let Some(&missing) = labels.labels().iter().find(|&&l| l as usize >= palette.len()) {
        return Err(Error::OutOfRange(format!("palette has {} entries, label {missing} has none", palette.len())));
    }
    let (w, h) = (labels.cols() as u32, labels.rows() as u32);
    Ok(RgbImage::from_fn(w, h, |x, y| Rgb(palette[labels.get(y as usize, x as usize) as usize])))
}

/// Inverse of [`colorize`] for injective palettes.
pub fn decolorize(img: &RgbImage, palette: &[[u8; 3]]) -> Result<LabelMap> {
    let lookup: std::collections::HashMap<[u8; 3], u32> =
        palette.iter().enumerate().map(|(i, c)| (*c, i as u32)).collect();
    if lookup.len() != palette.len() {
        return Err(Error::invalid("palette is not injective"));
    }
    let labels = img
        .pixels()
        .map(|p| lookup.get(&p.0).copied().ok_or_else(|| Error::invalid(format!("colour {:?} not in palette", p.0))))
        .collect::<Result<Vec<_>>>()?;
    LabelMap::new(img.height() as usize, img.width() as usize, palette.len(), labels)
}
