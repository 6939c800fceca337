//! The sixteen degradation operators.
//!
//! Intensity `s` in `[0, 1]` maps to physical parameters as follows. Every
//! mapping is monotone in `s`; `s = 0` never reaches this module (the caller
//! returns an exact copy).
//!
//! | type                     | parameters at intensity `s`                                          |
//! |--------------------------|----------------------------------------------------------------------|
//! | `lens_blur`              | Gaussian blur, sigma = 8s px, kernel radius ceil(3 sigma)            |
//! | `lens_flare`             | additive Gaussian blob, peak 180s, sigma = 0.25 min(w, h), random centre |
//! | `motion_blur`            | line kernel of 1 + round(30s) px, angle uniform in [0, 180) deg      |
//! | `dirty_lens`             | low-frequency smudge mask composited at opacity 0.6s                 |
//! | `saturation`             | HSV saturation x (1 - 0.9s) or x (1 + 1.5s), fair coin               |
//! | `compression`            | JPEG round trip at quality round(95 - 85s)                           |
//! | `block_change`           | round(12s) 16x16 blocks overwritten by other blocks of the image     |
//! | `shifting`               | circular shift of round(0.2 s w) px on a random band 0.3h tall       |
//! | `scan_lines`             | every ceil(1 / max(s, 1/16))-th row scaled by (1 - 0.5s)             |
//! | `darkness`               | gain (1 - 0.8s)                                                      |
//! | `atmospheric_turbulence` | smoothed (sigma 8 px) random displacement, max 6s px                 |
//! | `noise`                  | additive Gaussian, sigma = 50s                                       |
//! | `color_diffusion`        | per-channel offset of round(6s) px in a random direction             |
//! | `sharpness_change`       | unsharp mask amount 2s, or Gaussian sigma = 3s, fair coin            |
//! | `graffiti`               | 1 + round(4s) opaque polylines, width 2..=8 px, saturated colours    |
//! | `watermark_damage`       | tiled glyph pattern blended at opacity 0.5s                          |
//!
//! Rounding is half-up throughout; arithmetic runs in `f64` and is quantized
//! once when the operator returns.

use std::f64::consts::{PI, TAU};
use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use image::ExtendedColorType;

use super::types::DegradationType;
use crate::raster::RasterImage;
use crate::rng::RngState;

/// Half-up rounding to an integer.
#[inline]
fn round_hu(v: f64) -> i64 {
    libm::floor(v + 0.5) as i64
}

/// Working buffer: interleaved RGB `f64` samples.
struct Buf {
    w: usize,
    h: usize,
    px: Vec<f64>,
}

impl Buf {
    fn from_image(img: &RasterImage) -> Self {
        Self {
            w: img.width() as usize,
            h: img.height() as usize,
            px: img.to_f64(),
        }
    }

    fn into_image(self) -> RasterImage {
        RasterImage::from_f64(self.w as u32, self.h as u32, &self.px)
    }

    #[inline]
    fn at(&self, x: usize, y: usize, c: usize) -> f64 {
        self.px[(y * self.w + x) * 3 + c]
    }

    /// Clamp-to-edge integer fetch.
    #[inline]
    fn clamped(&self, x: i64, y: i64, c: usize) -> f64 {
        let x = x.clamp(0, self.w as i64 - 1) as usize;
        let y = y.clamp(0, self.h as i64 - 1) as usize;
        self.at(x, y, c)
    }

    /// Bilinear sample with clamp-to-edge.
    fn bilinear(&self, x: f64, y: f64, c: usize) -> f64 {
        let x0 = libm::floor(x);
        let y0 = libm::floor(y);
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as i64, y0 as i64);
        let top = self.clamped(xi, yi, c) * (1.0 - fx) + self.clamped(xi + 1, yi, c) * fx;
        let bottom =
            self.clamped(xi, yi + 1, c) * (1.0 - fx) + self.clamped(xi + 1, yi + 1, c) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

pub(super) fn apply(
    kind: DegradationType,
    img: &RasterImage,
    s: f64,
    rng: &mut RngState,
) -> RasterImage {
    use DegradationType::*;
    match kind {
        LensBlur => lens_blur(img, s),
        LensFlare => lens_flare(img, s, rng),
        MotionBlur => motion_blur(img, s, rng),
        DirtyLens => dirty_lens(img, s, rng),
        Saturation => saturation(img, s, rng),
        Compression => compression(img, s),
        BlockChange => block_change(img, s, rng),
        Shifting => shifting(img, s, rng),
        ScanLines => scan_lines(img, s),
        Darkness => darkness(img, s),
        AtmosphericTurbulence => turbulence(img, s, rng),
        Noise => noise(img, s, rng),
        ColorDiffusion => color_diffusion(img, s, rng),
        SharpnessChange => sharpness(img, s, rng),
        Graffiti => graffiti(img, s, rng),
        WatermarkDamage => watermark(img, s, rng),
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = libm::ceil(3.0 * sigma).max(1.0) as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| libm::exp(-((i * i) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable convolution of a planar field with `channels` interleaved values.
fn convolve_separable(src: &[f64], w: usize, h: usize, channels: usize, kernel: &[f64]) -> Vec<f64> {
    let r = (kernel.len() / 2) as i64;
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..channels {
                let mut acc = 0.0;
                for (k, wk) in kernel.iter().enumerate() {
                    let sx = (x as i64 + k as i64 - r).clamp(0, w as i64 - 1) as usize;
                    acc += wk * src[(y * w + sx) * channels + c];
                }
                tmp[(y * w + x) * channels + c] = acc;
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for c in 0..channels {
                let mut acc = 0.0;
                for (k, wk) in kernel.iter().enumerate() {
                    let sy = (y as i64 + k as i64 - r).clamp(0, h as i64 - 1) as usize;
                    acc += wk * tmp[(sy * w + x) * channels + c];
                }
                out[(y * w + x) * channels + c] = acc;
            }
        }
    }
    out
}

fn gaussian_blur(buf: &Buf, sigma: f64) -> Vec<f64> {
    convolve_separable(&buf.px, buf.w, buf.h, 3, &gaussian_kernel(sigma))
}

fn lens_blur(img: &RasterImage, s: f64) -> RasterImage {
    let mut buf = Buf::from_image(img);
    buf.px = gaussian_blur(&buf, 8.0 * s);
    buf.into_image()
}

fn lens_flare(img: &RasterImage, s: f64, rng: &mut RngState) -> RasterImage {
    let mut buf = Buf::from_image(img);
    let cx = rng.uniform(0.0, buf.w as f64);
    let cy = rng.uniform(0.0, buf.h as f64);
    let sigma = 0.25 * buf.w.min(buf.h) as f64;
    let peak = 180.0 * s;
    // Warm tint: red strongest.
    let tint = [1.0, 0.92, 0.78];
    for y in 0..buf.h {
        for x in 0..buf.w {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            let g = peak * libm::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            let i = (y * buf.w + x) * 3;
            for c in 0..3 {
                buf.px[i + c] += g * tint[c];
            }
        }
    }
    buf.into_image()
}

fn motion_blur(img: &RasterImage, s: f64, rng: &mut RngState) -> RasterImage {
    let len = 1 + round_hu(30.0 * s);
    let angle = rng.uniform(0.0, PI);
    if len <= 1 {
        return img.clone();
    }
    let src = Buf::from_image(img);
    let (dx, dy) = (libm::cos(angle), libm::sin(angle));
    let half = (len - 1) as f64 / 2.0;
    let mut out = vec![0.0; src.px.len()];
    for y in 0..src.h {
        for x in 0..src.w {
            for c in 0..3 {
                let mut acc = 0.0;
                for k in 0..len {
                    let t = k as f64 - half;
                    acc += src.bilinear(x as f64 + t * dx, y as f64 + t * dy, c);
                }
                out[(y * src.w + x) * 3 + c] = acc / len as f64;
            }
        }
    }
    Buf { px: out, ..src }.into_image()
}

/// Smooth random field in `[0, 1]` built from a coarse lattice.
fn value_noise(w: usize, h: usize, cells: usize, rng: &mut RngState) -> Vec<f64> {
    let n = cells + 1;
    let lattice: Vec<f64> = (0..n * n).map(|_| rng.next_f64()).collect();
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let gy = y as f64 / (h - 1).max(1) as f64 * cells as f64;
        let y0 = (libm::floor(gy) as usize).min(cells - 1);
        let fy = smooth(gy - y0 as f64);
        for x in 0..w {
            let gx = x as f64 / (w - 1).max(1) as f64 * cells as f64;
            let x0 = (libm::floor(gx) as usize).min(cells - 1);
            let fx = smooth(gx - x0 as f64);
            let v00 = lattice[y0 * n + x0];
            let v10 = lattice[y0 * n + x0 + 1];
            let v01 = lattice[(y0 + 1) * n + x0];
            let v11 = lattice[(y0 + 1) * n + x0 + 1];
            let top = v00 + (v10 - v00) * fx;
            let bottom = v01 + (v11 - v01) * fx;
            out.push(top + (bottom - top) * fy);
        }
    }
    out
}

#[inline]
fn smooth(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn dirty_lens(img: &RasterImage, s: f64, rng: &mut RngState) -> RasterImage {
    let mut buf = Buf::from_image(img);
    let field = value_noise(buf.w, buf.h, 4, rng);
    let base = rng.uniform(50.0, 110.0);
    let colour = [base + 12.0, base, base - 12.0];
    let opacity = 0.6 * s;
    for (p, v) in field.iter().enumerate() {
        // Blobs where the field exceeds 0.35, soft edges.
        let m = smooth((v - 0.35) / 0.4);
        let a = opacity * m;
        for c in 0..3 {
            let i = p * 3 + c;
            buf.px[i] = buf.px[i] * (1.0 - a) + colour[c] * a;
        }
    }
    buf.into_image()
}

fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        (b - r) / d + 2.0
    } else {
        (r - g) / d + 4.0
    };
    let sat = if max == 0.0 { 0.0 } else { d / max };
    (h / 6.0, sat, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> (f64, f64, f64) {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h6.rem_euclid(2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (r + m, g + m, b + m)
}

fn saturation(img: &RasterImage, s: f64, rng: &mut RngState) -> RasterImage {
    let factor = if rng.coin() {
        1.0 - 0.9 * s
    } else {
        1.0 + 1.5 * s
    };
    let mut buf = Buf::from_image(img);
    for p in buf.px.chunks_exact_mut(3) {
        let (h, sat, v) = rgb_to_hsv(p[0], p[1], p[2]);
        let (r, g, b) = hsv_to_rgb(h, (sat * factor).min(1.0), v);
        p[0] = r;
        p[1] = g;
        p[2] = b;
    }
    buf.into_image()
}

/// JPEG quality used by the compression operator at intensity `s`.
pub fn jpeg_quality(s: f64) -> u8 {
    round_hu(95.0 - 85.0 * s).clamp(1, 100) as u8
}

fn compression(img: &RasterImage, s: f64) -> RasterImage {
    let mut bytes = Vec::new();
    JpegEncoder::new_with_quality(&mut Cursor::new(&mut bytes), jpeg_quality(s))
        .encode(img.data(), img.width(), img.height(), ExtendedColorType::Rgb8)
        .expect("in-memory JPEG encoding of a valid RGB buffer");
    let decoded = image::load_from_memory_with_format(&bytes, image::ImageFormat::Jpeg)
        .expect("decoding our own JPEG")
        .to_rgb8();
    RasterImage::new(img.width(), img.height(), decoded.into_raw())
        .expect("JPEG round trip keeps dimensions")
}

fn block_change(img: &RasterImage, s: f64, rng: &mut RngState) -> RasterImage {
    let count = round_hu(12.0 * s).max(0) as usize;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let bw = w.min(16);
    let bh = h.min(16);
    let src = img.data();
    let mut out = src.to_vec();
    for _ in 0..count {
        let dx = rng.range_inclusive(0, w - bw);
        let dy = rng.range_inclusive(0, h - bh);
        let sx = rng.range_inclusive(0, w - bw);
        let sy = rng.range_inclusive(0, h - bh);
        for row in 0..bh {
            let from = ((sy + row) * w + sx) * 3;
            let to = ((dy + row) * w + dx) * 3;
            out[to..to + bw * 3].copy_from_slice(&src[from..from + bw * 3]);
        }
    }
    RasterImage::new(img.width(), img.height(), out).expect("same dimensions")
}

fn shifting(img: &RasterImage, s: f64, rng: &mut RngState) -> RasterImage {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let shift = round_hu(0.2 * s * w as f64).max(0) as usize % w;
    let band = (round_hu(0.3 * h as f64).max(1) as usize).min(h);
    let y0 = rng.range_inclusive(0, h - band);
    let rightward = rng.coin();
    let src = img.data();
    let mut out = src.to_vec();
    for y in y0..y0 + band {
        for x in 0..w {
            let from_x = if rightward {
                (x + w - shift) % w
            } else {
                (x + shift) % w
            };
            let to = (y * w + x) * 3;
            let from = (y * w + from_x) * 3;
            out[to..to + 3].copy_from_slice(&src[from..from + 3]);
        }
    }
    RasterImage::new(img.width(), img.height(), out).expect("same dimensions")
}

fn scan_lines(img: &RasterImage, s: f64) -> RasterImage {
    let period = libm::ceil(1.0 / s.max(1.0 / 16.0)).max(1.0) as usize;
    let gain = 1.0 - 0.5 * s;
    let mut buf = Buf::from_image(img);
    let row_len = buf.w * 3;
    for y in (period - 1..buf.h).step_by(period) {
        for v in &mut buf.px[y * row_len..(y + 1) * row_len] {
            *v *= gain;
        }
    }
    buf.into_image()
}

fn darkness(img: &RasterImage, s: f64) -> RasterImage {
    let gain = 1.0 - 0.8 * s;
    let mut buf = Buf::from_image(img);
    buf.px.iter_mut().for_each(|v| *v *= gain);
    buf.into_image()
}

fn turbulence(img: &RasterImage, s: f64, rng: &mut RngState) -> RasterImage {
    let src = Buf::from_image(img);
    let (w, h) = (src.w, src.h);
    let raw: Vec<f64> = (0..w * h * 2).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let field = convolve_separable(&raw, w, h, 2, &gaussian_kernel(8.0));
    let peak = field
        .chunks_exact(2)
        .map(|d| libm::sqrt(d[0] * d[0] + d[1] * d[1]))
        .fold(0.0, f64::max);
    if peak == 0.0 {
        return img.clone();
    }
    let scale = 6.0 * s / peak;
    let mut out = vec![0.0; src.px.len()];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let sx = x as f64 + field[p * 2] * scale;
            let sy = y as f64 + field[p * 2 + 1] * scale;
            for c in 0..3 {
                out[p * 3 + c] = src.bilinear(sx, sy, c);
            }
        }
    }
    Buf { px: out, ..src }.into_image()
}

fn noise(img: &RasterImage, s: f64, rng: &mut RngState) -> RasterImage {
    let sigma = 50.0 * s;
    let mut buf = Buf::from_image(img);
    for v in &mut buf.px {
        *v += sigma * rng.gaussian();
    }
    buf.into_image()
}

fn color_diffusion(img: &RasterImage, s: f64, rng: &mut RngState) -> RasterImage {
    let reach = round_hu(6.0 * s) as f64;
    let offsets: Vec<(i64, i64)> = (0..3)
        .map(|_| {
            let theta = rng.uniform(0.0, TAU);
            (
                round_hu(reach * libm::cos(theta)),
                round_hu(reach * libm::sin(theta)),
            )
        })
        .collect();
    let src = Buf::from_image(img);
    let mut out = vec![0.0; src.px.len()];
    for y in 0..src.h {
        for x in 0..src.w {
            for (c, (ox, oy)) in offsets.iter().enumerate() {
                out[(y * src.w + x) * 3 + c] = src.clamped(x as i64 - ox, y as i64 - oy, c);
            }
        }
    }
    Buf { px: out, ..src }.into_image()
}

fn sharpness(img: &RasterImage, s: f64, rng: &mut RngState) -> RasterImage {
    let mut buf = Buf::from_image(img);
    if rng.coin() {
        let amount = 2.0 * s;
        let blurred = gaussian_blur(&buf, 1.0);
        for (v, b) in buf.px.iter_mut().zip(blurred) {
            *v += amount * (*v - b);
        }
    } else {
        buf.px = gaussian_blur(&buf, 3.0 * s);
    }
    buf.into_image()
}

fn distance_to_segment(px: f64, py: f64, a: (f64, f64), b: (f64, f64)) -> f64 {
    let (vx, vy) = (b.0 - a.0, b.1 - a.1);
    let len2 = vx * vx + vy * vy;
    let t = if len2 == 0.0 {
        0.0
    } else {
        (((px - a.0) * vx + (py - a.1) * vy) / len2).clamp(0.0, 1.0)
    };
    let (cx, cy) = (a.0 + t * vx - px, a.1 + t * vy - py);
    libm::sqrt(cx * cx + cy * cy)
}

fn graffiti(img: &RasterImage, s: f64, rng: &mut RngState) -> RasterImage {
    let strokes = 1 + round_hu(4.0 * s).max(0) as usize;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = img.data().to_vec();
    for _ in 0..strokes {
        let points = rng.range_inclusive(2, 4);
        let path: Vec<(f64, f64)> = (0..points)
            .map(|_| (rng.uniform(0.0, w as f64), rng.uniform(0.0, h as f64)))
            .collect();
        let half_width = rng.range_inclusive(2, 8) as f64 / 2.0;
        let (r, g, b) = hsv_to_rgb(rng.next_f64(), 1.0, 1.0);
        let colour = [
            crate::raster::quantize(r * 255.0),
            crate::raster::quantize(g * 255.0),
            crate::raster::quantize(b * 255.0),
        ];
        for seg in path.windows(2) {
            let (a, bpt) = (seg[0], seg[1]);
            let x_lo = (a.0.min(bpt.0) - half_width).floor().max(0.0) as usize;
            let x_hi = ((a.0.max(bpt.0) + half_width).ceil() as usize).min(w - 1);
            let y_lo = (a.1.min(bpt.1) - half_width).floor().max(0.0) as usize;
            let y_hi = ((a.1.max(bpt.1) + half_width).ceil() as usize).min(h - 1);
            for y in y_lo..=y_hi {
                for x in x_lo..=x_hi {
                    if distance_to_segment(x as f64 + 0.5, y as f64 + 0.5, a, bpt) <= half_width {
                        let i = (y * w + x) * 3;
                        out[i..i + 3].copy_from_slice(&colour);
                    }
                }
            }
        }
    }
    RasterImage::new(img.width(), img.height(), out).expect("same dimensions")
}

/// 5x7 bitmaps spelling the watermark text; bit 4 is the leftmost column.
const WATERMARK_GLYPHS: [[u8; 7]; 6] = [
    [0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110], // S
    [0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001], // A
    [0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001], // M
    [0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000], // P
    [0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111], // L
    [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111], // E
];

fn watermark_mask(w: usize, h: usize, rng: &mut RngState) -> Vec<bool> {
    let scale = (w.min(h) / 64).max(1);
    let glyph_w = 6 * scale;
    let tile_w = WATERMARK_GLYPHS.len() * glyph_w + 6 * scale;
    let tile_h = 7 * scale + 6 * scale;
    let ox = rng.below(tile_w as u64) as usize;
    let oy = rng.below(tile_h as u64) as usize;
    let mut mask = vec![false; w * h];
    for y in 0..h {
        let ty = (y + oy) / tile_h;
        let ry = (y + oy) % tile_h / scale;
        if ry >= 7 {
            continue;
        }
        // Alternate rows are staggered by half a tile.
        let stagger = if ty % 2 == 1 { tile_w / 2 } else { 0 };
        for x in 0..w {
            let rx = (x + ox + stagger) % tile_w;
            let glyph = rx / glyph_w;
            let col = rx % glyph_w / scale;
            if glyph < WATERMARK_GLYPHS.len() && col < 5 {
                mask[y * w + x] = WATERMARK_GLYPHS[glyph][ry] >> (4 - col) & 1 == 1;
            }
        }
    }
    mask
}

fn watermark(img: &RasterImage, s: f64, rng: &mut RngState) -> RasterImage {
    let mut buf = Buf::from_image(img);
    let mask = watermark_mask(buf.w, buf.h, rng);
    let alpha = 0.5 * s;
    for (p, &on) in mask.iter().enumerate() {
        if on {
            for c in 0..3 {
                let i = p * 3 + c;
                buf.px[i] = buf.px[i] * (1.0 - alpha) + 255.0 * alpha;
            }
        }
    }
    buf.into_image()
}
