//! RGB images, binary hole masks and scalar maps, with PNG I/O.
//!
//! Images are planar float64 in `[0, 1]`. Masks use 1 for hole pixels.

use std::io::{BufRead, Cursor, Seek, Write};
use std::path::Path;

use crate::error::{extent, invalid, Result};
use crate::tensor::Tensor;

/// Largest accepted PNG side; inputs beyond this are rejected before decoding.
pub const MAX_PNG_SIDE: u32 = 8192;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    /// `[3][height][width]`
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != 3 * width * height {
            return Err(extent(format!(
                "{width}x{height} RGB image needs {} values, got {}",
                3 * width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; 3 * width * height],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(3 * width * height);
        for c in 0..3 {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn same_extent<M: Extent>(&self, other: &M) -> bool {
        (self.width, self.height) == other.extent()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, 3, self.height, self.width], self.data.clone())
            .expect("consistent extents")
    }

    /// Image from sample `n` of a `[N,3,H,W]` tensor.
    pub fn from_tensor(t: &Tensor, n: usize) -> Result<Self> {
        let (_, c, h, w) = t.dims4()?;
        if c != 3 {
            return Err(extent(format!("expected 3 channels, got {c}")));
        }
        Self::new(w, h, t.sample(n).to_vec())
    }

    /// `self * (1 - m)`: zero inside the hole.
    pub fn knock_out(&self, m: &Mask) -> Result<Self> {
        check_extent(self, m)?;
        let plane = self.width * self.height;
        let mut out = self.clone();
        for (i, v) in out.data.iter_mut().enumerate() {
            if m.bits[i % plane] != 0 {
                *v = 0.0;
            }
        }
        Ok(out)
    }

    /// Take `fill` inside `m` and `self` elsewhere.
    pub fn composite(&self, fill: &Image, m: &Mask) -> Result<Self> {
        check_extent(self, m)?;
        check_extent(self, fill)?;
        let plane = self.width * self.height;
        let data = (0..self.data.len())
            .map(|i| {
                if m.bits[i % plane] != 0 {
                    fill.data[i]
                } else {
                    self.data[i]
                }
            })
            .collect();
        Ok(Self {
            width: self.width,
            height: self.height,
            data,
        })
    }

    pub fn downsample2x(&self) -> Result<Self> {
        let t = crate::tensor::downsample_avg2x(&self.to_tensor())?;
        Self::from_tensor(&t, 0)
    }

    pub fn upsample2x(&self) -> Self {
        let t = crate::tensor::upsample_nearest2x(&self.to_tensor()).expect("rank-4 input");
        Self::from_tensor(&t, 0).expect("3 channels")
    }

    /// Quantize to interleaved 8-bit RGB.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let plane = self.width * self.height;
        let mut out = Vec::with_capacity(3 * plane);
        for p in 0..plane {
            for c in 0..3 {
                out.push(quantize(self.data[c * plane + p]));
            }
        }
        out
    }

    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        if rgb.len() != 3 * width * height {
            return Err(extent(format!(
                "{width}x{height} RGB8 needs {} bytes, got {}",
                3 * width * height,
                rgb.len()
            )));
        }
        let plane = width * height;
        let mut data = vec![0.0; 3 * plane];
        for p in 0..plane {
            for c in 0..3 {
                data[c * plane + p] = rgb[3 * p + c] as f64 / 255.0;
            }
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let raw = decode_png(Cursor::new(bytes))?;
        Self::from_rgb8(raw.width, raw.height, &raw.rgb())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        encode_png(
            self.width,
            self.height,
            png::ColorType::Rgb,
            &self.to_rgb8(),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode_png(&std::fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode_png()?)?;
        Ok(())
    }
}

pub(crate) fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Anything with `(width, height)` extents.
pub trait Extent {
    fn extent(&self) -> (usize, usize);
}

impl Extent for Image {
    fn extent(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

impl Extent for Mask {
    fn extent(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

impl Extent for GrayMap {
    fn extent(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

pub fn check_extent(a: &impl Extent, b: &impl Extent) -> Result<()> {
    if a.extent() != b.extent() {
        return Err(extent(format!("{:?} vs {:?}", a.extent(), b.extent())));
    }
    Ok(())
}

/// Binary map, 1 = hole.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<u8>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(extent(format!(
                "{width}x{height} mask needs {} bits, got {}",
                width * height,
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(invalid("mask values must be 0 or 1"));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![0; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            bits: vec![1; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(y, x) as u8);
            }
        }
        Self {
            width,
            height,
            bits,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x] != 0
    }

    pub fn set(&mut self, y: usize, x: usize, hole: bool) {
        self.bits[y * self.width + x] = hole as u8;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    pub fn hole_ratio(&self) -> f64 {
        if self.bits.is_empty() {
            0.0
        } else {
            self.count() as f64 / self.bits.len() as f64
        }
    }

    fn zip(&self, other: &Mask, f: impl Fn(u8, u8) -> u8) -> Result<Mask> {
        check_extent(self, other)?;
        Ok(Mask {
            width: self.width,
            height: self.height,
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn and(&self, other: &Mask) -> Result<Mask> {
        self.zip(other, |a, b| a & b)
    }

    pub fn or(&self, other: &Mask) -> Result<Mask> {
        self.zip(other, |a, b| a | b)
    }

    /// `self AND NOT other`.
    pub fn minus(&self, other: &Mask) -> Result<Mask> {
        self.zip(other, |a, b| a & (1 - b))
    }

    pub fn not(&self) -> Mask {
        Mask {
            width: self.width,
            height: self.height,
            bits: self.bits.iter().map(|&b| 1 - b).collect(),
        }
    }

    /// True when every hole bit of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.extent() == other.extent() && self.bits.iter().zip(&other.bits).all(|(&a, &b)| a <= b)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            &[1, 1, self.height, self.width],
            self.bits.iter().map(|&b| b as f64).collect(),
        )
        .expect("consistent extents")
    }

    /// Halve the resolution; an output pixel is a hole if any of its four
    /// sources is.
    pub fn downsample2x_any(&self) -> Result<Mask> {
        if self.width % 2 != 0 || self.height % 2 != 0 {
            return Err(extent(format!(
                "mask {}x{} must have even extents",
                self.width, self.height
            )));
        }
        Ok(Mask::from_fn(self.width / 2, self.height / 2, |y, x| {
            self.get(2 * y, 2 * x)
                || self.get(2 * y, 2 * x + 1)
                || self.get(2 * y + 1, 2 * x)
                || self.get(2 * y + 1, 2 * x + 1)
        }))
    }

    pub fn upsample2x(&self) -> Mask {
        Mask::from_fn(self.width * 2, self.height * 2, |y, x| {
            self.get(y / 2, x / 2)
        })
    }

    /// Decode a PNG, marking every pixel with any nonzero channel (alpha
    /// ignored) as a hole.
    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let raw = decode_png(Cursor::new(bytes))?;
        let rgb = raw.rgb();
        let bits = rgb
            .chunks_exact(3)
            .map(|p| (p.iter().any(|&v| v > 0)) as u8)
            .collect();
        Mask::new(raw.width, raw.height, bits)
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let gray: Vec<u8> = self.bits.iter().map(|&b| b * 255).collect();
        encode_png(self.width, self.height, png::ColorType::Grayscale, &gray)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::decode_png(&std::fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.encode_png()?)?;
        Ok(())
    }

    /// Rasterize polygons (even-odd rule, sampled at pixel centres). Each
    /// polygon is a list of `(x, y)` vertices in pixel coordinates.
    pub fn from_polygons(width: usize, height: usize, polygons: &[Vec<(f64, f64)>]) -> Self {
        let mut m = Mask::empty(width, height);
        for poly in polygons.iter().filter(|p| p.len() >= 3) {
            for y in 0..height {
                let py = y as f64 + 0.5;
                let mut xs: Vec<f64> = Vec::new();
                for i in 0..poly.len() {
                    let (x0, y0) = poly[i];
                    let (x1, y1) = poly[(i + 1) % poly.len()];
                    if (y0 <= py && py < y1) || (y1 <= py && py < y0) {
                        xs.push(x0 + (py - y0) / (y1 - y0) * (x1 - x0));
                    }
                }
                xs.sort_by(|a, b| a.total_cmp(b));
                for pair in xs.chunks_exact(2) {
                    for x in 0..width {
                        let px = x as f64 + 0.5;
                        if px >= pair[0] && px < pair[1] {
                            m.bits[y * width + x] = 1;
                        }
                    }
                }
            }
        }
        m
    }
}

/// Control regions for guided upsampling read from one PNG: a nonzero red
/// channel marks "avoid", a nonzero green channel marks "use".
pub fn decode_control_png(bytes: &[u8]) -> Result<(Mask, Mask)> {
    let raw = decode_png(Cursor::new(bytes))?;
    let rgb = raw.rgb();
    let avoid = rgb.chunks_exact(3).map(|p| (p[0] > 0) as u8).collect();
    let usable = rgb.chunks_exact(3).map(|p| (p[1] > 0) as u8).collect();
    Ok((
        Mask::new(raw.width, raw.height, avoid)?,
        Mask::new(raw.width, raw.height, usable)?,
    ))
}

/// Single-channel float map (confidence, saliency scores).
#[derive(Debug, Clone, PartialEq)]
pub struct GrayMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

pub type ConfidenceMap = GrayMap;

impl GrayMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(extent(format!(
                "{width}x{height} map needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn full(width: usize, height: usize, v: f64) -> Self {
        Self {
            width,
            height,
            data: vec![v; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// `self * m` (zero outside the hole).
    pub fn masked(&self, m: &Mask) -> Result<GrayMap> {
        check_extent(self, m)?;
        Ok(GrayMap {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(m.bits())
                .map(|(&v, &b)| if b != 0 { v } else { 0.0 })
                .collect(),
        })
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let gray: Vec<u8> = self.data.iter().map(|&v| quantize(v)).collect();
        encode_png(self.width, self.height, png::ColorType::Grayscale, &gray)
    }
}

struct RawPng {
    width: usize,
    height: usize,
    color: png::ColorType,
    buf: Vec<u8>,
}

impl RawPng {
    /// Interleaved RGB8, dropping alpha and expanding gray.
    fn rgb(&self) -> Vec<u8> {
        let n = self.width * self.height;
        let mut out = Vec::with_capacity(3 * n);
        let step = match self.color {
            png::ColorType::Grayscale => 1,
            png::ColorType::GrayscaleAlpha => 2,
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            png::ColorType::Indexed => unreachable!("expanded on decode"),
        };
        for px in self.buf.chunks_exact(step).take(n) {
            if step < 3 {
                out.extend_from_slice(&[px[0]; 3]);
            } else {
                out.extend_from_slice(&px[..3]);
            }
        }
        out
    }
}

fn decode_png<R: BufRead + Seek>(reader: R) -> Result<RawPng> {
    let mut decoder = png::Decoder::new_with_limits(reader, png::Limits { bytes: 256 << 20 });
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info()?;
    let (w, h) = {
        let info = reader.info();
        (info.width, info.height)
    };
    if w == 0 || h == 0 || w > MAX_PNG_SIDE || h > MAX_PNG_SIDE {
        return Err(extent(format!("png extents {w}x{h} out of range")));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| invalid("png output buffer size overflows"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf)?;
    buf.truncate(info.buffer_size());
    Ok(RawPng {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        buf,
    })
}

fn encode_png(width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header()?;
        writer.write_image_data(data)?;
        writer.finish()?;
    }
    out.flush()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact() {
        let rgb: Vec<u8> = (0..4 * 3 * 3).map(|i| (i * 7 % 256) as u8).collect();
        let img = Image::from_rgb8(4, 3, &rgb).unwrap();
        let back = Image::decode_png(&img.encode_png().unwrap()).unwrap();
        assert_eq!(back.to_rgb8(), rgb);
        assert_eq!(back, img);
    }

    #[test]
    fn mask_png_thresholds_nonzero() {
        let m = Mask::from_fn(5, 4, |y, x| (x + y) % 3 == 0);
        let back = Mask::decode_png(&m.encode_png().unwrap()).unwrap();
        assert_eq!(back, m);
        let gray = GrayMap::new(2, 1, vec![0.0, 1.0 / 255.0]).unwrap();
        let as_mask = Mask::decode_png(&gray.encode_png().unwrap()).unwrap();
        assert_eq!(as_mask.bits(), &[0, 1]);
    }

    #[test]
    fn garbage_png_is_an_error() {
        assert!(Image::decode_png(b"not a png").is_err());
        assert!(Mask::decode_png(&[0x89, b'P', b'N', b'G']).is_err());
    }

    #[test]
    fn polygon_rasterizes_square() {
        let m = Mask::from_polygons(
            8,
            8,
            &[vec![(2.0, 2.0), (6.0, 2.0), (6.0, 6.0), (2.0, 6.0)]],
        );
        assert_eq!(m.count(), 16);
        assert!(m.get(2, 2) && m.get(5, 5) && !m.get(6, 6) && !m.get(1, 3));
    }

    #[test]
    fn knock_out_zeroes_only_hole() {
        let img = Image::from_fn(3, 2, |c, y, x| 0.1 + (c + y + x) as f64 * 0.1);
        let m = Mask::from_fn(3, 2, |y, x| y == 0 && x == 1);
        let z = img.knock_out(&m).unwrap();
        for c in 0..3 {
            assert_eq!(z.get(c, 0, 1), 0.0);
            assert_eq!(z.get(c, 1, 1), img.get(c, 1, 1));
        }
    }

    #[test]
    fn quantization_is_exact_for_8bit_values() {
        for k in 0..=255u8 {
            assert_eq!(quantize(k as f64 / 255.0), k);
        }
    }
}
