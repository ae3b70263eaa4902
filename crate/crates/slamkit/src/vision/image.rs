//! Grayscale image buffers, small appearance patches and binary PGM I/O.

use std::io::{self, BufRead, Write};
use std::path::Path;

use nalgebra::Vector2;

/// Row-major 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: u32,
    pub height: u32,
    data: Vec<u8>,
}

/// Inclusive pixel rectangle, used for search regions and detector ROIs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelRect {
    pub x0: i32,
    pub y0: i32,
    pub x1: i32,
    pub y1: i32,
}

impl PixelRect {
    pub fn new(x0: i32, y0: i32, x1: i32, y1: i32) -> Self {
        Self { x0, y0, x1, y1 }
    }

    /// Centered box of half-width `rx`, half-height `ry`.
    pub fn around(center: Vector2<f64>, rx: f64, ry: f64) -> Self {
        Self {
            x0: (center.x - rx).floor() as i32,
            y0: (center.y - ry).floor() as i32,
            x1: (center.x + rx).ceil() as i32,
            y1: (center.y + ry).ceil() as i32,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.x1 < self.x0 || self.y1 < self.y0
    }

    pub fn width(&self) -> i32 {
        (self.x1 - self.x0 + 1).max(0)
    }

    pub fn height(&self) -> i32 {
        (self.y1 - self.y0 + 1).max(0)
    }

    pub fn area(&self) -> i64 {
        self.width() as i64 * self.height() as i64
    }

    pub fn contains(&self, p: Vector2<f64>) -> bool {
        p.x >= self.x0 as f64 && p.x <= self.x1 as f64 && p.y >= self.y0 as f64 && p.y <= self.y1 as f64
    }

    pub fn intersect(&self, other: &PixelRect) -> PixelRect {
        PixelRect {
            x0: self.x0.max(other.x0),
            y0: self.y0.max(other.y0),
            x1: self.x1.min(other.x1),
            y1: self.y1.min(other.y1),
        }
    }
}

impl GrayImage {
    pub fn new(width: u32, height: u32) -> Self {
        assert!(width > 0 && height > 0);
        Self {
            width,
            height,
            data: vec![0; (width * height) as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> u8) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.data[(y * width + x) as usize] = f(x, y);
            }
        }
        img
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), (width * height) as usize);
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> u8 {
        debug_assert!(x < self.width && y < self.height);
        self.data[(y * self.width + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: u8) {
        debug_assert!(x < self.width && y < self.height);
        self.data[(y * self.width + x) as usize] = v;
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn row(&self, y: u32) -> &[u8] {
        let start = (y * self.width) as usize;
        &self.data[start..start + self.width as usize]
    }

    pub fn full_rect(&self) -> PixelRect {
        PixelRect::new(0, 0, self.width as i32 - 1, self.height as i32 - 1)
    }

    /// Square patch centered at an integer pixel; None when it would cross
    /// the image border.
    pub fn patch_at(&self, cx: i32, cy: i32, side: u32) -> Option<Patch> {
        let half = side as i32 / 2;
        let (x0, y0) = (cx - half, cy - half);
        if x0 < 0 || y0 < 0 || x0 + side as i32 > self.width as i32 || y0 + side as i32 > self.height as i32 {
            return None;
        }
        let mut data = Vec::with_capacity((side * side) as usize);
        for j in 0..side as i32 {
            for i in 0..side as i32 {
                data.push(self.get((x0 + i) as u32, (y0 + j) as u32) as f64);
            }
        }
        Some(Patch { side, data })
    }

    /// 2x2 box-averaged half-resolution image (odd trailing row/column
    /// dropped). Used to seed the hierarchical template search.
    pub fn half_resolution(&self) -> GrayImage {
        let w = self.width / 2;
        let h = self.height / 2;
        let mut out = GrayImage::new(w.max(1), h.max(1));
        for y in 0..h {
            for x in 0..w {
                let s = self.get(2 * x, 2 * y) as u16
                    + self.get(2 * x + 1, 2 * y) as u16
                    + self.get(2 * x, 2 * y + 1) as u16
                    + self.get(2 * x + 1, 2 * y + 1) as u16;
                out.set(x, y, ((s + 2) / 4) as u8);
            }
        }
        out
    }

    pub fn save_pgm(&self, path: &Path) -> io::Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = io::BufWriter::new(file);
        write_pgm(&mut w, self)
    }

    pub fn load_pgm(path: &Path) -> io::Result<GrayImage> {
        let file = std::fs::File::open(path)?;
        let mut r = io::BufReader::new(file);
        read_pgm(&mut r)
    }
}

/// Square appearance template. Values are stored as f64 so warped patches
/// keep interpolated intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub side: u32,
    data: Vec<f64>,
}

impl Patch {
    pub fn new(side: u32) -> Self {
        assert!(side > 0);
        Self {
            side,
            data: vec![0.0; (side * side) as usize],
        }
    }

    pub fn from_fn(side: u32, mut f: impl FnMut(u32, u32) -> f64) -> Self {
        let mut p = Self::new(side);
        for y in 0..side {
            for x in 0..side {
                p.data[(y * side + x) as usize] = f(x, y);
            }
        }
        p
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> f64 {
        debug_assert!(x < self.side && y < self.side);
        self.data[(y * self.side + x) as usize]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, v: f64) {
        debug_assert!(x < self.side && y < self.side);
        self.data[(y * self.side + x) as usize] = v;
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    /// 2x2 box-averaged half patch for the coarse search level.
    pub fn half_resolution(&self) -> Patch {
        let s = (self.side / 2).max(1);
        Patch::from_fn(s, |x, y| {
            if 2 * x + 1 < self.side && 2 * y + 1 < self.side {
                0.25 * (self.get(2 * x, 2 * y)
                    + self.get(2 * x + 1, 2 * y)
                    + self.get(2 * x, 2 * y + 1)
                    + self.get(2 * x + 1, 2 * y + 1))
            } else {
                self.get((2 * x).min(self.side - 1), (2 * y).min(self.side - 1))
            }
        })
    }

    /// Debug dump as an 8-bit PGM, values clamped to [0, 255].
    pub fn save_pgm(&self, path: &Path) -> io::Result<()> {
        let img = GrayImage::from_fn(self.side, self.side, |x, y| {
            self.get(x, y).round().clamp(0.0, 255.0) as u8
        });
        img.save_pgm(path)
    }
}

pub fn write_pgm<W: Write>(w: &mut W, img: &GrayImage) -> io::Result<()> {
    write!(w, "P5\n{} {}\n255\n", img.width, img.height)?;
    w.write_all(&img.data)
}

pub fn read_pgm<R: BufRead>(r: &mut R) -> io::Result<GrayImage> {
    let bad = |msg: &str| io::Error::new(io::ErrorKind::InvalidData, msg.to_string());

    // header: magic, width, height, maxval as whitespace-separated tokens,
    // with # comment lines allowed
    let mut tokens: Vec<String> = Vec::new();
    let mut header = Vec::new();
    while tokens.len() < 4 {
        let mut byte = [0u8; 1];
        let mut line = Vec::new();
        loop {
            let n = r.read(&mut byte)?;
            if n == 0 || byte[0] == b'\n' {
                break;
            }
            line.push(byte[0]);
        }
        let text = String::from_utf8_lossy(&line);
        let text = text.split('#').next().unwrap_or("");
        tokens.extend(text.split_whitespace().map(str::to_string));
        header.extend_from_slice(&line);
        if header.len() > 512 {
            return Err(bad("PGM header too long"));
        }
    }
    if tokens[0] != "P5" {
        return Err(bad("not a binary PGM (P5)"));
    }
    let width: u32 = tokens[1].parse().map_err(|_| bad("bad width"))?;
    let height: u32 = tokens[2].parse().map_err(|_| bad("bad height"))?;
    let maxval: u32 = tokens[3].parse().map_err(|_| bad("bad maxval"))?;
    if width == 0 || height == 0 || maxval != 255 {
        return Err(bad("unsupported PGM dimensions or maxval"));
    }
    let mut data = vec![0u8; (width * height) as usize];
    r.read_exact(&mut data)?;
    Ok(GrayImage { width, height, data })
}
