//! VGG-16 front section (conv1_1 .. pool2) and the grayscale baseline.
//!
//! A 224x224x3 input passes through two 3x3 conv+ReLU pairs, each followed by
//! 2x2 max-pooling, producing a 56x56x128 stack of convolutional maps.

use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::binfmt::{read_file, write_atomic, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::tensor::{conv2d, maxpool2, relu, FilterBank, Padding, Tensor};

pub const INPUT_SIZE: usize = 224;
pub const POOL2_SIZE: usize = 56;
pub const POOL2_CHANNELS: usize = 128;
pub const DEFAULT_GRAYSCALE_SIZE: usize = 224;

const WEIGHTS_MAGIC: &[u8; 4] = b"CDWT";
const WEIGHTS_VERSION: u32 = 1;
const MAP_DUMP_MAGIC: &[u8; 4] = b"CDMD";

/// One convolution of the front section: name, input and output channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub name: &'static str,
    pub in_channels: usize,
    pub out_channels: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Conv(ConvLayerSpec),
    MaxPool,
}

/// Fixed layer sequence up to the second pooling layer.
pub struct BackboneSpec;

impl BackboneSpec {
    pub const KERNEL_SIZE: usize = 3;

    pub const CONVS: [ConvLayerSpec; 4] = [
        ConvLayerSpec { name: "conv1_1", in_channels: 3, out_channels: 64 },
        ConvLayerSpec { name: "conv1_2", in_channels: 64, out_channels: 64 },
        ConvLayerSpec { name: "conv2_1", in_channels: 64, out_channels: 128 },
        ConvLayerSpec { name: "conv2_2", in_channels: 128, out_channels: 128 },
    ];

    pub fn layers() -> [Layer; 6] {
        let c = Self::CONVS;
        [
            Layer::Conv(c[0]),
            Layer::Conv(c[1]),
            Layer::MaxPool,
            Layer::Conv(c[2]),
            Layer::Conv(c[3]),
            Layer::MaxPool,
        ]
    }
}

/// Filter banks for the four front convolutions plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightStore {
    banks: Vec<FilterBank>,
    source: String,
    checksum: u32,
}

impl WeightStore {
    /// Validates bank shapes against [`BackboneSpec`].
    pub fn new(banks: Vec<FilterBank>, source: impl Into<String>) -> Result<Self> {
        if banks.len() != BackboneSpec::CONVS.len() {
            return Err(Error::format(format!(
                "expected {} convolution layers, got {}",
                BackboneSpec::CONVS.len(),
                banks.len()
            )));
        }
        for (i, (bank, spec)) in banks.iter().zip(BackboneSpec::CONVS).enumerate() {
            let want = (
                spec.out_channels,
                BackboneSpec::KERNEL_SIZE,
                BackboneSpec::KERNEL_SIZE,
                spec.in_channels,
            );
            if bank.dims() != want {
                return Err(Error::format(format!(
                    "layer {i} ({}) has shape {:?}, expected {:?} (kernels, kh, kw, in_channels)",
                    spec.name,
                    bank.dims(),
                    want
                )));
            }
        }
        let mut store = Self {
            banks,
            source: source.into(),
            checksum: 0,
        };
        store.checksum = crc32fast::hash(&store.encode_body()?);
        Ok(store)
    }

    pub fn banks(&self) -> &[FilterBank] {
        &self.banks
    }

    pub fn bank(&self, layer: usize) -> &FilterBank {
        &self.banks[layer]
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// CRC32 of the encoded file body (equal to the file's trailing checksum).
    pub fn checksum(&self) -> u32 {
        self.checksum
    }

    /// Returns a copy with layer `layer` replaced.
    pub fn with_bank(&self, layer: usize, bank: FilterBank) -> Result<Self> {
        let mut banks = self.banks.clone();
        banks[layer] = bank;
        WeightStore::new(banks, self.source.clone())
    }

    fn encode_body(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new(WEIGHTS_MAGIC);
        w.u32(WEIGHTS_VERSION);
        w.len_u32(self.banks.len())?;
        for (bank, spec) in self.banks.iter().zip(BackboneSpec::CONVS) {
            w.str(spec.name)?;
            let (k, kh, kw, cin) = bank.dims();
            for d in [k, kh, kw, cin] {
                w.len_u32(d)?;
            }
            w.f32s(bank.weights());
            w.f32s(bank.biases());
        }
        Ok(w.finish())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut body = self.encode_body()?;
        body.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
        Ok(body)
    }

    pub fn from_bytes(bytes: &[u8], source: impl Into<String>) -> Result<Self> {
        let mut r = ByteReader::with_crc("weight file", bytes, WEIGHTS_MAGIC)?;
        let version = r.u32()?;
        if version != WEIGHTS_VERSION {
            return Err(Error::format(format!("unsupported weight file version {version}")));
        }
        let count = r.u32()? as usize;
        if count != BackboneSpec::CONVS.len() {
            return Err(Error::format(format!(
                "weight file has {count} layers, expected {}",
                BackboneSpec::CONVS.len()
            )));
        }
        let mut banks = Vec::with_capacity(count);
        for (i, spec) in BackboneSpec::CONVS.iter().enumerate() {
            let name = r.str()?;
            let dims = [r.u32()?, r.u32()?, r.u32()?, r.u32()?].map(|d| d as usize);
            let want = [
                spec.out_channels,
                BackboneSpec::KERNEL_SIZE,
                BackboneSpec::KERNEL_SIZE,
                spec.in_channels,
            ];
            if dims != want {
                return Err(Error::format(format!(
                    "layer {i} ({name}) has shape {dims:?}, expected {want:?} (kernels, kh, kw, in_channels)"
                )));
            }
            let weights = r.f32s(dims.iter().product())?;
            let biases = r.f32s(dims[0])?;
            let bank = FilterBank::new(dims[0], dims[1], dims[2], dims[3], weights, biases)
                .map_err(|e| Error::format(format!("layer {i} ({name}): {e}")))?;
            banks.push(bank);
        }
        r.finish()?;
        WeightStore::new(banks, source)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_file(path)?;
        Self::from_bytes(&bytes, path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelOrder {
    Rgb,
    Bgr,
}

/// Input normalization for the backbone. Means are given in `order`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub order: ChannelOrder,
    pub means: [f32; 3],
}

impl Default for PreprocessConfig {
    /// Caffe-style ImageNet means in BGR order.
    fn default() -> Self {
        Self {
            order: ChannelOrder::Bgr,
            means: [103.939, 116.779, 123.68],
        }
    }
}

/// Bilinear resize of a row-major plane with half-pixel centers and edge clamping.
pub fn resize_bilinear(src: &[f32], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    assert_eq!(src.len(), h * w);
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let axis = |o: usize, scale: f64, n: usize| {
        let p = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = p.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, p - i0 as f64)
    };
    let cols: Vec<_> = (0..out_w).map(|x| axis(x, sx, w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = axis(y, sy, h);
        for &(x0, x1, fx) in &cols {
            let top = src[y0 * w + x0] as f64 * (1.0 - fx) + src[y0 * w + x1] as f64 * fx;
            let bot = src[y1 * w + x0] as f64 * (1.0 - fx) + src[y1 * w + x1] as f64 * fx;
            out.push((top * (1.0 - fy) + bot * fy) as f32);
        }
    }
    out
}

fn check_raster(raster: &RgbImage) -> Result<()> {
    if raster.width() == 0 || raster.height() == 0 {
        return Err(Error::invalid("image has no pixels"));
    }
    Ok(())
}

/// Resizes to 224x224 and subtracts per-channel means, in the configured channel order.
pub fn preprocess_image(raster: &RgbImage, config: &PreprocessConfig) -> Result<Tensor> {
    check_raster(raster)?;
    let (w, h) = (raster.width() as usize, raster.height() as usize);
    let src_channel = |c: usize| -> usize {
        match config.order {
            ChannelOrder::Rgb => c,
            ChannelOrder::Bgr => 2 - c,
        }
    };
    let planes: Vec<Vec<f32>> = (0..3)
        .map(|c| {
            let sc = src_channel(c);
            let plane: Vec<f32> = raster.pixels().map(|p| p.0[sc] as f32).collect();
            resize_bilinear(&plane, h, w, INPUT_SIZE, INPUT_SIZE)
        })
        .collect();
    let n = INPUT_SIZE * INPUT_SIZE;
    let mut data = Vec::with_capacity(n * 3);
    for i in 0..n {
        for c in 0..3 {
            data.push(planes[c][i] - config.means[c]);
        }
    }
    Tensor::new(INPUT_SIZE, INPUT_SIZE, 3, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Convmap,
    Grayscale,
}

impl SourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Convmap => "convmap",
            SourceKind::Grayscale => "grayscale",
        }
    }
}

/// The maps a descriptor is computed on: pool2 output or the luma image.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvMapSet {
    maps: Tensor,
    source: SourceKind,
}

impl ConvMapSet {
    pub fn new(maps: Tensor, source: SourceKind) -> Result<Self> {
        if source == SourceKind::Convmap
            && maps.shape() != (POOL2_SIZE, POOL2_SIZE, POOL2_CHANNELS)
        {
            return Err(Error::invalid(format!(
                "convmap set must be {POOL2_SIZE}x{POOL2_SIZE}x{POOL2_CHANNELS}, got {:?}",
                maps.shape()
            )));
        }
        Ok(Self { maps, source })
    }

    pub fn maps(&self) -> &Tensor {
        &self.maps
    }

    pub fn source(&self) -> SourceKind {
        self.source
    }

    pub fn channels(&self) -> usize {
        self.maps.channels()
    }

    pub fn to_dump_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new(MAP_DUMP_MAGIC);
        let (h, wd, c) = self.maps.shape();
        w.len_u32(h)?;
        w.len_u32(wd)?;
        w.len_u32(c)?;
        w.f32s(self.maps.data());
        Ok(w.finish_with_crc())
    }

    pub fn from_dump_bytes(bytes: &[u8], source: SourceKind) -> Result<Self> {
        let mut r = ByteReader::with_crc("map dump", bytes, MAP_DUMP_MAGIC)?;
        let (h, w, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let data = r.f32s(h * w * c)?;
        r.finish()?;
        let maps = Tensor::new(h, w, c, data).map_err(|e| Error::format(format!("map dump: {e}")))?;
        ConvMapSet::new(maps, source).map_err(|e| Error::format(format!("map dump: {e}")))
    }
}

/// Runs conv1_1 .. pool2 on a preprocessed 224x224x3 tensor.
pub fn forward_to_pool2(input: &Tensor, weights: &WeightStore) -> Result<ConvMapSet> {
    if input.shape() != (INPUT_SIZE, INPUT_SIZE, 3) {
        return Err(Error::invalid(format!(
            "backbone input must be {INPUT_SIZE}x{INPUT_SIZE}x3, got {:?}",
            input.shape()
        )));
    }
    let mut x = input.clone();
    let mut conv_idx = 0;
    for layer in BackboneSpec::layers() {
        x = match layer {
            Layer::Conv(_) => {
                let out = relu(&conv2d(&x, weights.bank(conv_idx), Padding::Same)?);
                conv_idx += 1;
                out
            }
            Layer::MaxPool => maxpool2(&x)?,
        };
    }
    ConvMapSet::new(x, SourceKind::Convmap)
}

/// ITU-R BT.601 luma, then bilinear resize to `side x side`.
pub fn grayscale_map_set(raster: &RgbImage, side: usize) -> Result<ConvMapSet> {
    check_raster(raster)?;
    if side == 0 {
        return Err(Error::invalid("grayscale side length must be positive"));
    }
    let (w, h) = (raster.width() as usize, raster.height() as usize);
    let luma: Vec<f32> = raster
        .pixels()
        .map(|p| {
            let [r, g, b] = p.0.map(|v| v as f64);
            (0.299 * r + 0.587 * g + 0.114 * b) as f32
        })
        .collect();
    let plane = resize_bilinear(&luma, h, w, side, side);
    ConvMapSet::new(Tensor::from_plane(side, side, plane)?, SourceKind::Grayscale)
}
