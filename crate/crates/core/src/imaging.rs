//! Raster decoding, grayscale conversion, cropping and bilinear resizing down
//! to the 50×50 sample format the classifier consumes.

use crate::numerics::Tensor;
use std::io::Cursor;

/// Side length of a preprocessed character sample.
pub const SAMPLE_SIZE: usize = 50;

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("malformed image file: {0}")]
    MalformedFile(String),
    #[error("unsupported image feature: {0}")]
    UnsupportedFeature(String),
    #[error("crop {x},{y} {w}x{h} is outside the {width}x{height} image")]
    OutOfBounds {
        x: i64,
        y: i64,
        w: i64,
        h: i64,
        width: usize,
        height: usize,
    },
    #[error("invalid image dimensions: {0}")]
    InvalidDimensions(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Pgm,
}

impl ImageFormat {
    /// Guess from a file extension (case-insensitive).
    pub fn from_extension(ext: &str) -> Option<Self> {
        match ext.to_ascii_lowercase().as_str() {
            "png" => Some(Self::Png),
            "pgm" => Some(Self::Pgm),
            _ => None,
        }
    }

    pub fn from_path(path: &std::path::Path) -> Option<Self> {
        path.extension()
            .and_then(|e| e.to_str())
            .and_then(Self::from_extension)
    }

    pub fn content_type(self) -> &'static str {
        match self {
            Self::Png => "image/png",
            Self::Pgm => "image/x-portable-graymap",
        }
    }
}

/// Interleaved 8-bit raster with 1, 3 or 4 channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl RasterImage {
    pub fn new(
        width: usize,
        height: usize,
        channels: usize,
        pixels: Vec<u8>,
    ) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::InvalidDimensions(format!(
                "{width}x{height} has zero area"
            )));
        }
        if !matches!(channels, 1 | 3 | 4) {
            return Err(ImageError::InvalidDimensions(format!(
                "{channels} channels (expected 1, 3 or 4)"
            )));
        }
        if pixels.len() != width * height * channels {
            return Err(ImageError::InvalidDimensions(format!(
                "{width}x{height}x{channels} needs {} bytes, got {}",
                width * height * channels,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }
}

impl From<GrayImage> for RasterImage {
    fn from(g: GrayImage) -> Self {
        Self {
            width: g.width,
            height: g.height,
            channels: 1,
            pixels: g.pixels,
        }
    }
}

/// Single-channel 8-bit luminance image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self, ImageError> {
        if width == 0 || height == 0 {
            return Err(ImageError::InvalidDimensions(format!(
                "{width}x{height} has zero area"
            )));
        }
        if pixels.len() != width * height {
            return Err(ImageError::InvalidDimensions(format!(
                "{width}x{height} needs {} bytes, got {}",
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self, ImageError> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }
    pub fn height(&self) -> usize {
        self.height
    }
    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }
}

pub fn decode_image(bytes: &[u8], format: ImageFormat) -> Result<RasterImage, ImageError> {
    match format {
        ImageFormat::Png => decode_png(bytes),
        ImageFormat::Pgm => decode_pgm(bytes).map(RasterImage::from),
    }
}

/// Sniff PNG or PGM from the leading magic bytes.
pub fn decode_any(bytes: &[u8]) -> Result<RasterImage, ImageError> {
    if bytes.starts_with(b"\x89PNG") {
        decode_png(bytes)
    } else if bytes.starts_with(b"P5") {
        decode_image(bytes, ImageFormat::Pgm)
    } else {
        Err(ImageError::MalformedFile(
            "unrecognized magic (expected PNG or binary PGM)".into(),
        ))
    }
}

fn decode_png(bytes: &[u8]) -> Result<RasterImage, ImageError> {
    use png::{BitDepth, ColorType, DecodingError, Transformations};

    let map_err = |e: DecodingError| match e {
        DecodingError::IoError(io) => ImageError::MalformedFile(format!("truncated PNG: {io}")),
        DecodingError::Format(f) => ImageError::MalformedFile(f.to_string()),
        other => ImageError::UnsupportedFeature(other.to_string()),
    };

    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    // Palette and sub-byte gray are widened to 8 bits; 16-bit samples are not
    // stripped, so they are caught below.
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(map_err)?;
    let info = reader.info();
    if info.bit_depth == BitDepth::Sixteen {
        return Err(ImageError::UnsupportedFeature(
            "16-bit PNG samples".into(),
        ));
    }
    let size = reader.output_buffer_size().ok_or_else(|| {
        ImageError::UnsupportedFeature("PNG output buffer too large".into())
    })?;
    let mut buf = vec![0; size];
    let frame = reader.next_frame(&mut buf).map_err(map_err)?;
    if frame.bit_depth != BitDepth::Eight {
        return Err(ImageError::UnsupportedFeature(format!(
            "{:?} bit depth after expansion",
            frame.bit_depth
        )));
    }
    let (w, h) = (frame.width as usize, frame.height as usize);
    buf.truncate(frame.buffer_size());
    // Rows may be padded to `line_size`; repack tightly.
    let src_channels = frame.color_type.samples();
    let packed = repack_rows(&buf, w, h, src_channels, frame.line_size);
    match frame.color_type {
        ColorType::Grayscale | ColorType::Rgb | ColorType::Rgba => {
            RasterImage::new(w, h, src_channels, packed)
        }
        ColorType::GrayscaleAlpha => {
            let gray = packed.chunks_exact(2).map(|p| p[0]).collect();
            RasterImage::new(w, h, 1, gray)
        }
        ColorType::Indexed => Err(ImageError::UnsupportedFeature(
            "indexed PNG was not expanded".into(),
        )),
    }
}

fn repack_rows(buf: &[u8], w: usize, h: usize, channels: usize, line_size: usize) -> Vec<u8> {
    let row = w * channels;
    if line_size == row {
        return buf[..row * h].to_vec();
    }
    let mut out = Vec::with_capacity(row * h);
    for y in 0..h {
        out.extend_from_slice(&buf[y * line_size..y * line_size + row]);
    }
    out
}

/// Binary PGM (P5) with maxval 255.
pub fn decode_pgm(bytes: &[u8]) -> Result<GrayImage, ImageError> {
    let mut pos = 0usize;
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(ImageError::MalformedFile("missing P5 magic".into()));
    }
    pos += 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and `#` comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(ImageError::MalformedFile("truncated PGM header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(ImageError::MalformedFile("expected a number in PGM header".into()));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("ascii digits")
            .parse()
            .map_err(|_| ImageError::MalformedFile("PGM header number out of range".into()))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(ImageError::UnsupportedFeature(format!(
            "PGM maxval {maxval} (only 255)"
        )));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(ImageError::MalformedFile("missing separator after maxval".into())),
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| ImageError::MalformedFile("PGM dimensions overflow".into()))?;
    let data = bytes
        .get(pos..pos + n)
        .ok_or_else(|| ImageError::MalformedFile(format!("PGM pixel data shorter than {n} bytes")))?;
    GrayImage::new(width, height, data.to_vec())
        .map_err(|e| ImageError::MalformedFile(e.to_string()))
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

#[inline]
fn round_to_u8(v: f64) -> u8 {
    // f64::round is half away from zero
    v.round().clamp(0.0, 255.0) as u8
}

/// BT.601 luma; alpha is ignored.
pub fn to_grayscale(img: &RasterImage) -> GrayImage {
    let pixels = match img.channels {
        1 => img.pixels.clone(),
        c => img
            .pixels
            .chunks_exact(c)
            .map(|p| {
                round_to_u8(0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
            })
            .collect(),
    };
    GrayImage {
        width: img.width,
        height: img.height,
        pixels,
    }
}

pub fn crop(img: &GrayImage, x: i64, y: i64, w: i64, h: i64) -> Result<GrayImage, ImageError> {
    let oob = || ImageError::OutOfBounds {
        x,
        y,
        w,
        h,
        width: img.width,
        height: img.height,
    };
    if x < 0 || y < 0 || w < 1 || h < 1 {
        return Err(oob());
    }
    let (xu, yu, wu, hu) = (x as usize, y as usize, w as usize, h as usize);
    if xu + wu > img.width || yu + hu > img.height {
        return Err(oob());
    }
    let mut pixels = Vec::with_capacity(wu * hu);
    for row in yu..yu + hu {
        let start = row * img.width + xu;
        pixels.extend_from_slice(&img.pixels[start..start + wu]);
    }
    Ok(GrayImage {
        width: wu,
        height: hu,
        pixels,
    })
}

/// Source sample taps for one axis: (lower index, upper index, weight of upper).
fn axis_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    let max = (input - 1) as f64;
    (0..output)
        .map(|d| {
            let s = ((d as f64 + 0.5) * scale - 0.5).clamp(0.0, max);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

/// Bilinear resize with half-pixel centers.
pub fn resize_bilinear(img: &GrayImage, out_w: usize, out_h: usize) -> Result<GrayImage, ImageError> {
    if out_w == 0 || out_h == 0 {
        return Err(ImageError::InvalidDimensions(format!(
            "resize target {out_w}x{out_h}"
        )));
    }
    if out_w == img.width && out_h == img.height {
        return Ok(img.clone());
    }
    let xs = axis_taps(img.width, out_w);
    let ys = axis_taps(img.height, out_h);
    let mut pixels = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, ty) in &ys {
        for &(x0, x1, tx) in &xs {
            let p00 = f64::from(img.get(x0, y0));
            let p10 = f64::from(img.get(x1, y0));
            let p01 = f64::from(img.get(x0, y1));
            let p11 = f64::from(img.get(x1, y1));
            let top = p00 + (p10 - p00) * tx;
            let bottom = p01 + (p11 - p01) * tx;
            pixels.push(round_to_u8(top + (bottom - top) * ty));
        }
    }
    Ok(GrayImage {
        width: out_w,
        height: out_h,
        pixels,
    })
}

/// Gray 8-bit image to a `[1, h, w]` tensor scaled to `[0, 1]`.
pub fn gray_to_tensor(img: &GrayImage) -> Tensor {
    let data = img.pixels.iter().map(|&p| f32::from(p) / 255.0).collect();
    Tensor::from_vec(&[1, img.height, img.width], data).expect("shape matches pixel count")
}

/// Inverse of [`gray_to_tensor`] for a `[1, h, w]` or `[h, w]` tensor.
pub fn tensor_to_gray(t: &Tensor) -> Result<GrayImage, ImageError> {
    let shape = t.shape();
    let (h, w) = match shape {
        [1, h, w] | [h, w] => (*h, *w),
        _ => {
            return Err(ImageError::InvalidDimensions(format!(
                "cannot view {shape:?} as a gray image"
            )))
        }
    };
    let pixels = t
        .data()
        .iter()
        .map(|&v| round_to_u8(f64::from(v) * 255.0))
        .collect();
    GrayImage::new(w, h, pixels)
}

pub fn preprocess_gray(img: &GrayImage) -> Result<Tensor, ImageError> {
    let resized = resize_bilinear(img, SAMPLE_SIZE, SAMPLE_SIZE)?;
    Ok(gray_to_tensor(&resized))
}

/// Grayscale, resize to 50×50 and scale to `[0, 1]`.
pub fn preprocess_character(img: &RasterImage) -> Result<Tensor, ImageError> {
    preprocess_gray(&to_grayscale(img))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn encode_png(w: u32, h: u32, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, w, h);
            enc.set_color(color);
            enc.set_depth(depth);
            let mut writer = enc.write_header().unwrap();
            writer.write_image_data(data).unwrap();
        }
        out
    }

    #[test]
    fn pgm_single_pixel() {
        let mut bytes = b"P5 1 1 255\n".to_vec();
        bytes.push(0x7F);
        let img = decode_image(&bytes, ImageFormat::Pgm).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (1, 1, 1));
        assert_eq!(img.pixels(), &[127]);
    }

    #[test]
    fn pgm_with_comment_and_bad_maxval() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend([1, 2]);
        assert_eq!(decode_pgm(&bytes).unwrap().pixels(), &[1, 2]);
        let bad = b"P5 1 1 65535\n\x00\x00".to_vec();
        assert!(matches!(decode_pgm(&bad), Err(ImageError::UnsupportedFeature(_))));
        let short = b"P5 4 4 255\n\x00".to_vec();
        assert!(matches!(decode_pgm(&short), Err(ImageError::MalformedFile(_))));
        assert!(matches!(decode_pgm(b"P2 1 1 255\n0"), Err(ImageError::MalformedFile(_))));
    }

    #[test]
    fn png_rgb_two_pixels() {
        let bytes = encode_png(2, 1, png::ColorType::Rgb, png::BitDepth::Eight, &[255, 0, 0, 0, 0, 255]);
        let img = decode_image(&bytes, ImageFormat::Png).unwrap();
        assert_eq!((img.width(), img.height(), img.channels()), (2, 1, 3));
        assert_eq!(img.pixels(), &[255, 0, 0, 0, 0, 255]);
    }

    #[test]
    fn png_gray_and_rgba() {
        let bytes = encode_png(2, 2, png::ColorType::Grayscale, png::BitDepth::Eight, &[0, 50, 100, 150]);
        let img = decode_any(&bytes).unwrap();
        assert_eq!(img.channels(), 1);
        assert_eq!(img.pixels(), &[0, 50, 100, 150]);

        let rgba = [1, 2, 3, 4, 5, 6, 7, 8];
        let bytes = encode_png(2, 1, png::ColorType::Rgba, png::BitDepth::Eight, &rgba);
        let img = decode_any(&bytes).unwrap();
        assert_eq!(img.channels(), 4);
        assert_eq!(img.pixels(), &rgba);
    }

    #[test]
    fn png_sixteen_bit_is_unsupported() {
        let bytes = encode_png(1, 1, png::ColorType::Grayscale, png::BitDepth::Sixteen, &[0, 1]);
        assert!(matches!(
            decode_image(&bytes, ImageFormat::Png),
            Err(ImageError::UnsupportedFeature(_))
        ));
    }

    #[test]
    fn png_truncated_after_ihdr() {
        let bytes = encode_png(4, 4, png::ColorType::Grayscale, png::BitDepth::Eight, &[0; 16]);
        // signature (8) + IHDR chunk (4 len + 4 type + 13 data + 4 crc)
        let truncated = &bytes[..8 + 25];
        assert!(matches!(
            decode_image(truncated, ImageFormat::Png),
            Err(ImageError::MalformedFile(_))
        ));
        assert!(matches!(
            decode_image(b"\x89PNG\r\n\x1a\nxxxx", ImageFormat::Png),
            Err(ImageError::MalformedFile(_))
        ));
    }

    #[test]
    fn grayscale_values() {
        let img = RasterImage::new(3, 1, 3, vec![255, 255, 255, 255, 0, 0, 0, 0, 0]).unwrap();
        assert_eq!(to_grayscale(&img).pixels(), &[255, 76, 0]);
        let rgba = RasterImage::new(1, 1, 4, vec![255, 0, 0, 7]).unwrap();
        assert_eq!(to_grayscale(&rgba).pixels(), &[76]);
        let gray = RasterImage::new(2, 1, 1, vec![9, 200]).unwrap();
        assert_eq!(to_grayscale(&gray).pixels(), gray.pixels());
    }

    #[test]
    fn crop_cases() {
        let img = GrayImage::new(3, 3, (0..9).collect()).unwrap();
        assert_eq!(crop(&img, 0, 0, 3, 3).unwrap(), img);
        assert_eq!(crop(&img, 1, 1, 2, 2).unwrap().pixels(), &[4, 5, 7, 8]);
        assert!(matches!(crop(&img, 2, 0, 2, 1), Err(ImageError::OutOfBounds { .. })));
        assert!(matches!(crop(&img, -1, 0, 1, 1), Err(ImageError::OutOfBounds { .. })));
        assert!(matches!(crop(&img, 0, 0, 0, 1), Err(ImageError::OutOfBounds { .. })));
    }

    #[test]
    fn resize_cases() {
        let c = GrayImage::filled(7, 3, 93).unwrap();
        assert!(resize_bilinear(&c, 11, 2).unwrap().pixels().iter().all(|&p| p == 93));
        let checker = GrayImage::new(2, 2, vec![0, 255, 255, 0]).unwrap();
        assert_eq!(resize_bilinear(&checker, 1, 1).unwrap().pixels(), &[128]);
        let dot = GrayImage::filled(1, 1, 42).unwrap();
        let big = resize_bilinear(&dot, 50, 50).unwrap();
        assert_eq!(big.pixels().len(), 2500);
        assert!(big.pixels().iter().all(|&p| p == 42));
        assert!(resize_bilinear(&dot, 0, 3).is_err());
    }

    #[test]
    fn resize_upsample_hand_values() {
        // 2x1 [0, 100] -> 4x1: s = -0.25, 0.25, 0.75, 1.25 clamped to [0, 1]
        let img = GrayImage::new(2, 1, vec![0, 100]).unwrap();
        assert_eq!(resize_bilinear(&img, 4, 1).unwrap().pixels(), &[0, 25, 75, 100]);
    }

    #[test]
    fn preprocess_contract() {
        let white = RasterImage::new(4, 3, 3, vec![255; 36]).unwrap();
        let t = preprocess_character(&white).unwrap();
        assert_eq!(t.shape(), &[1, 50, 50]);
        assert!(t.data().iter().all(|&v| v == 1.0));
        let black = RasterImage::new(9, 9, 1, vec![0; 81]).unwrap();
        assert!(preprocess_character(&black).unwrap().data().iter().all(|&v| v == 0.0));
        let mixed: Vec<u8> = (0..100 * 30).map(|i| (i * 37 % 256) as u8).collect();
        let t = preprocess_character(&RasterImage::new(100, 30, 1, mixed).unwrap()).unwrap();
        assert_eq!(t.shape(), &[1, 50, 50]);
        assert!(t.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    fn gray_strategy() -> impl Strategy<Value = GrayImage> {
        (1usize..24, 1usize..24).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<u8>(), w * h)
                .prop_map(move |px| GrayImage::new(w, h, px).unwrap())
        })
    }

    proptest! {
        #[test]
        fn pgm_round_trip(img in gray_strategy()) {
            prop_assert_eq!(decode_pgm(&encode_pgm(&img)).unwrap(), img);
        }

        #[test]
        fn resize_same_size_is_identity(img in gray_strategy()) {
            let out = resize_bilinear(&img, img.width(), img.height()).unwrap();
            prop_assert_eq!(out, img);
        }

        #[test]
        fn preprocess_shape_is_fixed(w in 1usize..80, h in 1usize..80, ch in prop::sample::select(vec![1usize, 3, 4]), seed in any::<u64>()) {
            let mut rng = crate::numerics::Prng::new(seed);
            let px = (0..w * h * ch).map(|_| rng.next_u64() as u8).collect();
            let t = preprocess_character(&RasterImage::new(w, h, ch, px).unwrap()).unwrap();
            prop_assert_eq!(t.shape(), &[1, 50, 50]);
            prop_assert!(t.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }

        #[test]
        fn grayscale_within_one_of_exact(r in any::<u8>(), g in any::<u8>(), b in any::<u8>()) {
            let img = RasterImage::new(1, 1, 3, vec![r, g, b]).unwrap();
            let exact = 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b);
            let got = f64::from(to_grayscale(&img).pixels()[0]);
            prop_assert!((got - exact).abs() <= 1.0);
        }
    }
}
