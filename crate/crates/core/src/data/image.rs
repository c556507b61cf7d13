use std::io::Write;
use std::path::Path;

use crate::autodiff::{Scalar, Tensor};
use crate::error::{Error, Result};

/// 8-bit interleaved RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; width * height * 3],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }

    /// Planar `[3, H, W]` tensor with values in `[0, 1]`.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let plane = self.width * self.height;
        Tensor::from_fn(&[3, self.height, self.width], |i| {
            let (c, p) = (i / plane, i % plane);
            T::of(self.pixels[p * 3 + c] as f64 / 255.0)
        })
    }

    /// Inverse of [`RgbImage::to_tensor`], rounding and clamping.
    pub fn from_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let [c, h, w] = match t.shape() {
            &[c, h, w] => [c, h, w],
            s => return Err(Error::InvalidArgument(format!("expected a 3 x H x W tensor, got {s:?}"))),
        };
        if c != 3 {
            return Err(Error::InvalidArgument(format!("expected 3 channels, got {c}")));
        }
        let mut img = Self::new(w, h);
        let plane = w * h;
        for ch in 0..3 {
            for p in 0..plane {
                let v = (t.data()[ch * plane + p].as_f64() * 255.0).round().clamp(0.0, 255.0);
                img.pixels[p * 3 + ch] = v as u8;
            }
        }
        Ok(img)
    }
}

fn image_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Decodes a binary PPM (`P6`, maxval 255). Header comments are allowed.
pub fn decode_ppm(path: &Path, bytes: &[u8]) -> Result<RgbImage> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() && bytes[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(image_err(path, "truncated PPM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P6" {
        return Err(image_err(path, "not a binary PPM (P6) file"));
    }
    let mut number = |what: &str| -> Result<usize> {
        let t = token()?;
        t.parse().map_err(|_| image_err(path, format!("bad {what} {t:?}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 255 {
        return Err(image_err(path, format!("maxval {maxval} unsupported (need 255)")));
    }
    if width == 0 || height == 0 {
        return Err(image_err(path, "zero-sized image"));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let len = width * height * 3;
    if bytes.len() < start + len {
        return Err(image_err(path, format!("raster truncated: need {len} bytes")));
    }
    Ok(RgbImage {
        width,
        height,
        pixels: bytes[start..start + len].to_vec(),
    })
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

pub fn write_ppm(path: &Path, img: &RgbImage) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&encode_ppm(img))?;
    f.flush()?;
    Ok(())
}

#[cfg(feature = "png")]
fn decode_png(path: &Path, bytes: &[u8]) -> Result<RgbImage> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e.to_string()))?
        .to_rgb8();
    Ok(RgbImage {
        width: img.width() as usize,
        height: img.height() as usize,
        pixels: img.into_raw(),
    })
}

/// Whether `path` has an extension this build can decode.
pub fn is_supported_image(path: &Path) -> bool {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
        Some(e) if e == "ppm" => true,
        Some(e) if e == "png" => cfg!(feature = "png"),
        _ => false,
    }
}

/// Reads a PPM, or a PNG when built with the `png` feature.
pub fn read_image(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| image_err(path, e.to_string()))?;
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    match ext.as_deref() {
        Some("ppm") => decode_ppm(path, &bytes),
        #[cfg(feature = "png")]
        Some("png") => decode_png(path, &bytes),
        _ => Err(image_err(path, "unsupported image format")),
    }
}

/// Nearest-neighbor stretch of a `[C, H, W]` tensor to `[C, size, size]`.
pub fn resize_image<T: Scalar>(image: &Tensor<T>, size: usize) -> Result<Tensor<T>> {
    let [c, h, w] = match image.shape() {
        &[c, h, w] => [c, h, w],
        s => return Err(Error::InvalidArgument(format!("expected a C x H x W tensor, got {s:?}"))),
    };
    if size == 0 {
        return Err(Error::InvalidArgument("resize target must be positive".into()));
    }
    if (h, w) == (size, size) {
        return Ok(image.clone());
    }
    let src = image.data();
    Ok(Tensor::from_fn(&[c, size, size], |i| {
        let (ch, y, x) = (i / (size * size), (i / size) % size, i % size);
        let (sy, sx) = (y * h / size, x * w / size);
        src[(ch * h + sy) * w + sx]
    }))
}

/// Same stretch on 8-bit images.
pub fn resize_rgb(img: &RgbImage, width: usize, height: usize) -> RgbImage {
    if (img.width, img.height) == (width, height) {
        return img.clone();
    }
    let mut out = RgbImage::new(width, height);
    for y in 0..height {
        for x in 0..width {
            out.put(x, y, img.get(x * img.width / width, y * img.height / height));
        }
    }
    out
}

/// Distinct, saturated color for class `k`.
pub fn class_color(k: usize) -> [u8; 3] {
    const PALETTE: [[u8; 3]; 8] = [
        [255, 56, 56],
        [56, 255, 56],
        [56, 56, 255],
        [255, 210, 0],
        [255, 0, 255],
        [0, 220, 255],
        [255, 128, 0],
        [160, 0, 255],
    ];
    PALETTE[k % PALETTE.len()]
}

/// Draws each box as a `thickness`-pixel rectangle outline in its class
/// color. Box coordinates are image-relative, so any image size works.
pub fn draw_boxes(img: &mut RgbImage, boxes: &[crate::detect::BBox], thickness: usize) {
    if img.width == 0 || img.height == 0 {
        return;
    }
    let (wf, hf) = (img.width as f64, img.height as f64);
    for b in boxes {
        let [x1, y1, x2, y2] = b.xyxy();
        let px = |v: f64, len: f64| ((v * len).round().max(0.0) as usize).min(len as usize - 1);
        let (x1, x2) = (px(x1, wf), px(x2, wf));
        let (y1, y2) = (px(y1, hf), px(y2, hf));
        let color = class_color(b.class_id);
        for t in 0..thickness {
            let (top, bottom) = ((y1 + t).min(y2), y2.saturating_sub(t).max(y1));
            let (left, right) = ((x1 + t).min(x2), x2.saturating_sub(t).max(x1));
            for x in x1..=x2 {
                img.put(x, top, color);
                img.put(x, bottom, color);
            }
            for y in y1..=y2 {
                img.put(left, y, color);
                img.put(right, y, color);
            }
        }
    }
}
