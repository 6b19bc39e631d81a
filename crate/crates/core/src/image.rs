//! Grayscale images, frame sequences and patch extraction.
//!
//! Images are stored row-major in double precision. On disk they are binary
//! netpbm files: 8-bit `P5` graymaps (and `P6` pixmaps, converted to gray with
//! luminance weights 0.299/0.587/0.114 on read). A frame sequence is a
//! directory of `frame_000000.pgm`, `frame_000001.pgm`, ... plus a
//! `sequence.meta` file holding `frame_rate=<real>`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};

/// Default playback rate for sequences that carry no rate metadata.
pub const DEFAULT_FRAME_RATE: f64 = 24.0;

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::BadDimensions(format!(
                "image must be at least 1x1, got {width}x{height}"
            )));
        }
        if values.len() != width * height {
            return Err(Error::DimensionMismatch {
                what: "pixel count",
                expected: width * height,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadDimensions(
                "image contains non-finite values".into(),
            ));
        }
        Ok(GrayImage {
            width,
            height,
            values,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c));
            }
        }
        Self::new(width, height, values)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Row-major pixel values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Population variance (divisor = pixel count).
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.values.len() as f64
    }

    pub fn transpose(&self) -> GrayImage {
        GrayImage::from_fn(self.height, self.width, |r, c| self.get(c, r))
            .expect("transpose keeps a valid shape")
    }

    pub fn crop(&self, rect: CropRect) -> Result<GrayImage> {
        if rect.height == 0
            || rect.width == 0
            || rect.row + rect.height > self.height
            || rect.col + rect.width > self.width
        {
            return Err(Error::BadDimensions(format!(
                "crop {}x{} at ({}, {}) does not fit a {}x{} image",
                rect.width, rect.height, rect.row, rect.col, self.width, self.height
            )));
        }
        GrayImage::from_fn(rect.width, rect.height, |r, c| {
            self.get(rect.row + r, rect.col + c)
        })
    }
}

/// Axis-aligned crop rectangle in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropRect {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

/// Shift and scale an image to zero mean and unit (population) variance.
pub fn normalize_image(img: &GrayImage) -> Result<GrayImage> {
    if img.values.len() < 2 {
        return Err(Error::TooFewPixels {
            needed: 2,
            got: img.values.len(),
        });
    }
    let mean = img.mean();
    let var = img.variance();
    if var <= 0.0 {
        return Err(Error::ConstantImage);
    }
    let std = var.sqrt();
    GrayImage::new(
        img.width,
        img.height,
        img.values.iter().map(|v| (v - mean) / std).collect(),
    )
}

/// Bilinear resize to `target_width`, keeping the aspect ratio.
pub fn resize_to_width(img: &GrayImage, target_width: usize) -> Result<GrayImage> {
    if target_width == 0 {
        return Err(Error::BadDimensions("target width must be >= 1".into()));
    }
    let scale = target_width as f64 / img.width as f64;
    let target_height = ((img.height as f64 * scale).round() as usize).max(1);
    let sx = img.width as f64 / target_width as f64;
    let sy = img.height as f64 / target_height as f64;
    GrayImage::from_fn(target_width, target_height, |r, c| {
        let y = ((r as f64 + 0.5) * sy - 0.5).clamp(0.0, (img.height - 1) as f64);
        let x = ((c as f64 + 0.5) * sx - 0.5).clamp(0.0, (img.width - 1) as f64);
        bilinear(img, y, x)
    })
}

/// Bilinear sample at fractional coordinates inside the image.
pub(crate) fn bilinear(img: &GrayImage, y: f64, x: f64) -> f64 {
    let y0 = y.floor() as usize;
    let x0 = x.floor() as usize;
    let y1 = (y0 + 1).min(img.height - 1);
    let x1 = (x0 + 1).min(img.width - 1);
    let fy = y - y0 as f64;
    let fx = x - x0 as f64;
    if fx == 0.0 && fy == 0.0 {
        return img.get(y0, x0);
    }
    let top = img.get(y0, x0) * (1.0 - fx) + img.get(y0, x1) * fx;
    let bottom = img.get(y1, x0) * (1.0 - fx) + img.get(y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Vectorized square patches, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    data: DMatrix<f64>,
    patch_side: usize,
    source_tag: String,
    per_patch_mean_removed: bool,
}

impl PatchSet {
    pub fn new(
        data: DMatrix<f64>,
        patch_side: usize,
        source_tag: impl Into<String>,
        per_patch_mean_removed: bool,
    ) -> Result<Self> {
        if data.ncols() != patch_side * patch_side {
            return Err(Error::DimensionMismatch {
                what: "patch pixel count",
                expected: patch_side * patch_side,
                got: data.ncols(),
            });
        }
        Ok(PatchSet {
            data,
            patch_side,
            source_tag: source_tag.into(),
            per_patch_mean_removed,
        })
    }

    /// Wraps raw rows, subtracting each row's mean.
    pub fn from_rows_mean_removed(
        mut data: DMatrix<f64>,
        patch_side: usize,
        source_tag: impl Into<String>,
    ) -> Result<Self> {
        remove_row_means(&mut data);
        Self::new(data, patch_side, source_tag, true)
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    pub fn n_samples(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_pixels(&self) -> usize {
        self.data.ncols()
    }

    pub fn patch_side(&self) -> usize {
        self.patch_side
    }

    pub fn source_tag(&self) -> &str {
        &self.source_tag
    }

    pub fn per_patch_mean_removed(&self) -> bool {
        self.per_patch_mean_removed
    }

    /// Stacks patch sets with the same patch side, in order.
    pub fn concat(sets: &[PatchSet], source_tag: impl Into<String>) -> Result<PatchSet> {
        let first = sets
            .first()
            .ok_or_else(|| Error::InvalidConfig("no patch sets to concatenate".into()))?;
        let side = first.patch_side;
        let n_pixels = side * side;
        let total: usize = sets.iter().map(|s| s.n_samples()).sum();
        let mut data = DMatrix::zeros(total, n_pixels);
        let mut row = 0;
        for set in sets {
            if set.patch_side != side {
                return Err(Error::DimensionMismatch {
                    what: "patch side",
                    expected: side,
                    got: set.patch_side,
                });
            }
            data.rows_mut(row, set.n_samples()).copy_from(&set.data);
            row += set.n_samples();
        }
        PatchSet::new(
            data,
            side,
            source_tag,
            sets.iter().all(|s| s.per_patch_mean_removed),
        )
    }

    /// Patch `index` reshaped back into an image.
    pub fn patch_image(&self, index: usize) -> GrayImage {
        let row = self.data.row(index);
        GrayImage::from_fn(self.patch_side, self.patch_side, |r, c| {
            row[r * self.patch_side + c]
        })
        .expect("patch side is at least 1")
    }
}

fn remove_row_means(data: &mut DMatrix<f64>) {
    let n = data.ncols() as f64;
    for mut row in data.row_iter_mut() {
        let mean = row.iter().sum::<f64>() / n;
        row.iter_mut().for_each(|v| *v -= mean);
    }
}

fn crop_row_major(img: &GrayImage, row: usize, col: usize, side: usize, out: &mut [f64]) {
    for r in 0..side {
        let start = (row + r) * img.width + col;
        out[r * side..(r + 1) * side].copy_from_slice(&img.values[start..start + side]);
    }
}

fn subtract_mean(v: &mut [f64]) {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter_mut().for_each(|x| *x -= mean);
}

/// `count` patches at seeded uniform random locations, each mean-subtracted.
pub fn extract_random_patches(
    img: &GrayImage,
    patch_side: usize,
    count: usize,
    seed: u64,
) -> Result<PatchSet> {
    if patch_side == 0 || patch_side > img.width.min(img.height) {
        return Err(Error::PatchTooLarge {
            side: patch_side,
            width: img.width,
            height: img.height,
        });
    }
    if count == 0 {
        return Err(Error::InvalidConfig("patch count must be >= 1".into()));
    }
    let n_pixels = patch_side * patch_side;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = DMatrix::zeros(count, n_pixels);
    let mut buf = vec![0.0; n_pixels];
    for i in 0..count {
        let row = rng.random_range(0..=img.height - patch_side);
        let col = rng.random_range(0..=img.width - patch_side);
        crop_row_major(img, row, col, patch_side, &mut buf);
        subtract_mean(&mut buf);
        for (j, v) in buf.iter().enumerate() {
            data[(i, j)] = *v;
        }
    }
    PatchSet::new(data, patch_side, format!("random:seed={seed}"), true)
}

/// Seed for image `index` derived from a master seed (splitmix64 finalizer).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Spreads `total` random patches over `images` (earlier images take the
/// remainder), extracting each image's share in parallel with a derived seed.
/// The result equals sequential extraction.
pub fn extract_training_patches(
    images: &[GrayImage],
    patch_side: usize,
    total: usize,
    seed: u64,
) -> Result<PatchSet> {
    if images.is_empty() {
        return Err(Error::InvalidConfig("no training images".into()));
    }
    if total < images.len() {
        return Err(Error::InvalidConfig(format!(
            "need at least one patch per image ({} images, {total} patches)",
            images.len()
        )));
    }
    let base = total / images.len();
    let extra = total % images.len();
    let sets = images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let count = base + usize::from(i < extra);
            extract_random_patches(img, patch_side, count, derive_seed(seed, i as u64))
        })
        .collect::<Result<Vec<_>>>()?;
    PatchSet::concat(
        &sets,
        format!("training:images={},seed={seed}", images.len()),
    )
}

/// Frames of identical size played at `frame_rate` frames per second.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<GrayImage>,
    frame_rate: f64,
}

impl FrameSequence {
    pub fn new(frames: Vec<GrayImage>, frame_rate: f64) -> Result<Self> {
        if !(frame_rate > 0.0 && frame_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "frame rate must be positive, got {frame_rate}"
            )));
        }
        if let Some(first) = frames.first() {
            let (w, h) = (first.width, first.height);
            if let Some(bad) = frames.iter().find(|f| f.width != w || f.height != h) {
                return Err(Error::BadDimensions(format!(
                    "frame of size {}x{} in a {w}x{h} sequence",
                    bad.width, bad.height
                )));
            }
        }
        Ok(FrameSequence { frames, frame_rate })
    }

    pub fn frames(&self) -> &[GrayImage] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    /// Applies `f` to every frame, keeping the rate.
    pub fn map_frames(
        &self,
        f: impl Fn(&GrayImage) -> Result<GrayImage> + Sync + Send,
    ) -> Result<Self> {
        let frames = self.frames.par_iter().map(f).collect::<Result<Vec<_>>>()?;
        FrameSequence::new(frames, self.frame_rate)
    }
}

/// One mean-subtracted patch per frame, taken at the same origin.
pub fn extract_fixed_patches(
    seq: &FrameSequence,
    origin: (usize, usize),
    patch_side: usize,
) -> Result<PatchSet> {
    let first = seq
        .frames
        .first()
        .ok_or_else(|| Error::InvalidConfig("frame sequence is empty".into()))?;
    let (width, height) = (first.width, first.height);
    if patch_side == 0 || patch_side > width.min(height) {
        return Err(Error::PatchTooLarge {
            side: patch_side,
            width,
            height,
        });
    }
    let (row, col) = origin;
    if row + patch_side > height || col + patch_side > width {
        return Err(Error::OutOfBounds {
            row,
            col,
            side: patch_side,
            width,
            height,
        });
    }
    let n_pixels = patch_side * patch_side;
    let mut data = DMatrix::zeros(seq.len(), n_pixels);
    let mut buf = vec![0.0; n_pixels];
    for (t, frame) in seq.frames.iter().enumerate() {
        crop_row_major(frame, row, col, patch_side, &mut buf);
        subtract_mean(&mut buf);
        for (j, v) in buf.iter().enumerate() {
            data[(t, j)] = *v;
        }
    }
    PatchSet::new(
        data,
        patch_side,
        format!("fixed:origin=({row},{col})"),
        true,
    )
}

// ---------------------------------------------------------------------------
// netpbm I/O

struct Tokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn next_token(&mut self) -> Option<&'a [u8]> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        (self.pos > start).then(|| &self.bytes[start..self.pos])
    }

    fn next_usize(&mut self) -> Option<usize> {
        std::str::from_utf8(self.next_token()?).ok()?.parse().ok()
    }
}

/// Decodes a binary `P5` or `P6` image; samples map linearly to `[0, 1]`.
pub fn decode_pnm(bytes: &[u8], path: &Path) -> Result<GrayImage> {
    let mut tok = Tokens { bytes, pos: 0 };
    let magic = tok
        .next_token()
        .ok_or_else(|| Error::format(path, "empty file"))?;
    let channels = match magic {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(Error::format(path, "expected binary P5 or P6 netpbm")),
    };
    let header = (tok.next_usize(), tok.next_usize(), tok.next_usize());
    let (Some(width), Some(height), Some(maxval)) = header else {
        return Err(Error::format(path, "bad header"));
    };
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::format(path, "bad header values"));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = tok.pos + 1;
    let sample_bytes = if maxval < 256 { 1 } else { 2 };
    let expected = width * height * channels * sample_bytes;
    if bytes.len() < start + expected {
        return Err(Error::format(path, "truncated raster"));
    }
    let raster = &bytes[start..start + expected];
    let sample = |i: usize| -> f64 {
        let v = if sample_bytes == 1 {
            raster[i] as usize
        } else {
            ((raster[2 * i] as usize) << 8) | raster[2 * i + 1] as usize
        };
        v as f64 / maxval as f64
    };
    let values = (0..width * height)
        .map(|p| {
            if channels == 1 {
                sample(p)
            } else {
                (0..3).map(|ch| LUMA[ch] * sample(3 * p + ch)).sum()
            }
        })
        .collect();
    GrayImage::new(width, height, values)
}

pub fn read_pgm(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pnm(&bytes, path)
}

/// Encodes as 8-bit `P5`, mapping `lo..=hi` linearly onto `0..=255` (clamped).
pub fn encode_pgm(img: &GrayImage, lo: f64, hi: f64) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    let span = hi - lo;
    out.extend(img.values.iter().map(|v| {
        if span > 0.0 {
            ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
        } else {
            0
        }
    }));
    out
}

pub fn write_pgm(path: &Path, img: &GrayImage, lo: f64, hi: f64) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&encode_pgm(img, lo, hi))
        .map_err(|e| Error::io(path, e))
}

/// Writes an image whose values are already in `[0, 1]`.
pub fn write_pgm_unit(path: &Path, img: &GrayImage) -> Result<()> {
    write_pgm(path, img, 0.0, 1.0)
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.pgm")
}

pub const SEQUENCE_META: &str = "sequence.meta";

/// Reads a frame-sequence directory. A missing `sequence.meta` or missing
/// `frame_rate` key falls back to [`DEFAULT_FRAME_RATE`].
pub fn read_sequence(dir: &Path) -> Result<FrameSequence> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("frame_") && n.ends_with(".pgm"))
        })
        .collect();
    paths.sort();
    let meta = dir.join(SEQUENCE_META);
    let frame_rate = if meta.exists() {
        let text = fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
        parse_frame_rate(&text, &meta)?.unwrap_or(DEFAULT_FRAME_RATE)
    } else {
        DEFAULT_FRAME_RATE
    };
    let frames = paths
        .par_iter()
        .map(|p| read_pgm(p))
        .collect::<Result<Vec<_>>>()?;
    FrameSequence::new(frames, frame_rate)
}

fn parse_frame_rate(text: &str, path: &Path) -> Result<Option<f64>> {
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if let Some((key, value)) = line.split_once('=') {
            if key.trim() == "frame_rate" {
                return value
                    .trim()
                    .parse()
                    .map(Some)
                    .map_err(|_| Error::format(path, format!("bad frame_rate {value:?}")));
            }
        }
    }
    Ok(None)
}

/// Writes a frame-sequence directory, mapping `lo..=hi` onto the 8-bit range.
pub fn write_sequence(dir: &Path, seq: &FrameSequence, lo: f64, hi: f64) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, frame) in seq.frames.iter().enumerate() {
        write_pgm(&dir.join(frame_file_name(i)), frame, lo, hi)?;
    }
    let meta = dir.join(SEQUENCE_META);
    fs::write(&meta, format!("frame_rate={}\n", seq.frame_rate)).map_err(|e| Error::io(&meta, e))
}
