//! 8-bit RGB rasters, binary PPM / PNG I/O, and tensor conversion.

use std::fs;
use std::io::{BufReader, BufWriter, Cursor};
use std::path::Path;

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Interleaved 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize) -> Self {
        ImageBuffer {
            width,
            height,
            data: vec![0; width * height * 3],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(shape_err!(
                "{}x{} RGB image needs {} bytes, got {}",
                width,
                height,
                width * height * 3,
                data.len()
            ));
        }
        Ok(ImageBuffer { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [u8; 3]) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.put(x, y, f(x, y));
            }
        }
        img
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let o = (y * self.width + x) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, px: [u8; 3]) {
        let o = (y * self.width + x) * 3;
        self.data[o..o + 3].copy_from_slice(&px);
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(shape_err!(
                "crop {}x{} at ({}, {}) exceeds {}x{} image",
                w,
                h,
                x0,
                y0,
                self.width,
                self.height
            ));
        }
        Ok(Self::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y)))
    }

    /// Rotate 90° clockwise.
    pub fn rotate90(&self) -> Self {
        let (w, h) = (self.width, self.height);
        Self::from_fn(h, w, |x, y| self.get(y, h - 1 - x))
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| self.get(self.width - 1 - x, y))
    }

    /// `(1, 3, H, W)` tensor with values in `[0, 1]`.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let scale = 1.0 / 255.0;
        Tensor::from_fn([1, 3, self.height, self.width], |[_, c, y, x]| {
            T::of(self.data[(y * self.width + x) * 3 + c] as f64 * scale)
        })
    }

    /// Quantize batch element `index` of an `[0, 1]`-valued tensor, clamping and
    /// rounding half up.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>, index: usize) -> Result<Self> {
        let [n, c, h, w] = t.shape();
        if c != 3 || index >= n {
            return Err(shape_err!("cannot take RGB image {} from tensor {:?}", index, t.shape()));
        }
        Ok(Self::from_fn(w, h, |x, y| {
            let mut px = [0u8; 3];
            for (ch, p) in px.iter_mut().enumerate() {
                *p = quantize(t.at([index, ch, y, x]).as_f64());
            }
            px
        }))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        decode(&bytes).map_err(|msg| Error::io(path, msg))
    }

    /// Write as PNG when the extension is `.png`, binary PPM otherwise.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        let bytes = if is_png {
            self.encode_png().map_err(|m| Error::io(path, m))?
        } else {
            self.encode_ppm()
        };
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn encode_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    fn encode_png(&self) -> std::result::Result<Vec<u8>, String> {
        let mut buf = Vec::new();
        {
            let mut enc = png::Encoder::new(BufWriter::new(&mut buf), self.width as u32, self.height as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut writer = enc.write_header().map_err(|e| e.to_string())?;
            writer.write_image_data(&self.data).map_err(|e| e.to_string())?;
        }
        Ok(buf)
    }
}

/// `[0, 1]` real to 8-bit, clamped, rounded half up.
#[inline]
pub fn quantize(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0 + 0.5).floor().min(255.0) as u8
}

fn decode(bytes: &[u8]) -> std::result::Result<ImageBuffer, String> {
    if bytes.starts_with(b"P6") {
        decode_ppm(bytes)
    } else if bytes.starts_with(b"\x89PNG") {
        decode_png(bytes)
    } else {
        Err("unsupported image format (expected binary PPM or PNG)".into())
    }
}

fn decode_ppm(bytes: &[u8]) -> std::result::Result<ImageBuffer, String> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err("malformed PPM header".into());
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or("malformed PPM header")?;
    }
    let [w, h, maxval] = fields;
    if maxval > 255 {
        return Err(format!("16-bit PPM (maxval {maxval}) is not supported; convert to 8-bit"));
    }
    if maxval != 255 {
        return Err(format!("PPM maxval {maxval} unsupported; expected 255"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("malformed PPM header".into());
    }
    pos += 1;
    let need = w * h * 3;
    if bytes.len() - pos < need {
        return Err(format!(
            "truncated PPM: expected {need} bytes of pixel data, found {}",
            bytes.len() - pos
        ));
    }
    ImageBuffer::from_raw(w, h, bytes[pos..pos + need].to_vec()).map_err(|e| e.to_string())
}

fn decode_png(bytes: &[u8]) -> std::result::Result<ImageBuffer, String> {
    let mut decoder = png::Decoder::new(BufReader::new(Cursor::new(bytes)));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    if reader.info().bit_depth == png::BitDepth::Sixteen {
        return Err("16-bit PNG is not supported; convert to 8-bit".into());
    }
    let size = reader.output_buffer_size().ok_or("PNG too large")?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(format!("unsupported PNG bit depth {:?}", info.bit_depth));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        other => return Err(format!("unsupported PNG color type {other:?}")),
    };
    let mut data = Vec::with_capacity(w * h * 3);
    for y in 0..h {
        let row = &buf[y * info.line_size..y * info.line_size + w * channels];
        for px in row.chunks_exact(channels) {
            match channels {
                1 | 2 => data.extend_from_slice(&[px[0], px[0], px[0]]),
                _ => data.extend_from_slice(&px[..3]),
            }
        }
    }
    ImageBuffer::from_raw(w, h, data).map_err(|e| e.to_string())
}
