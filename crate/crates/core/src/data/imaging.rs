use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

fn dims(img: &Tensor) -> Result<(usize, usize, usize)> {
    match *img.shape() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::contract(format!("expected an H×W×C image, got shape {:?}", img.shape()))),
    }
}

/// Decodes a raster file into an `H×W×3` tensor with values in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect();
    Tensor::new(&[h as usize, w as usize, 3], data)
}

/// Writes an `H×W×3` tensor with values in `[0, 1]` as an 8-bit PNG.
pub fn save_png(img: &Tensor, path: &Path) -> Result<()> {
    let (h, w, c) = dims(img)?;
    if c != 3 {
        return Err(Error::contract("save_png needs three channels"));
    }
    let bytes: Vec<u8> = img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let buf = image::RgbImage::from_raw(w as u32, h as u32, bytes).expect("buffer size matches");
    buf.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Largest centered square.
pub fn center_crop(img: &Tensor) -> Result<Tensor> {
    let (h, w, c) = dims(img)?;
    let s = h.min(w);
    if s == h && s == w {
        return Ok(img.clone());
    }
    let (y0, x0) = ((h - s) / 2, (w - s) / 2);
    let mut out = Vec::with_capacity(s * s * c);
    for y in 0..s {
        let start = ((y0 + y) * w + x0) * c;
        out.extend_from_slice(&img.data()[start..start + s * c]);
    }
    Tensor::new(&[s, s, c], out)
}

/// Source coordinate and blend weight for output index `i` under
/// half-pixel-center alignment.
fn sample_axis(i: usize, n_in: usize, n_out: usize) -> (usize, usize, f64) {
    let src = ((i as f64 + 0.5) * n_in as f64 / n_out as f64 - 0.5).clamp(0.0, (n_in - 1) as f64);
    let lo = src.floor() as usize;
    let hi = (lo + 1).min(n_in - 1);
    (lo, hi, src - lo as f64)
}

/// Bilinear resampling to `out_h × out_w` with half-pixel centers and edge
/// clamping.
pub fn resize_bilinear(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w, c) = dims(img)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::contract("resize target must be nonempty"));
    }
    let src = img.data();
    let at = |y: usize, x: usize, ch: usize| src[(y * w + x) * c + ch];
    let cols: Vec<_> = (0..out_w).map(|x| sample_axis(x, w, out_w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for y in 0..out_h {
        let (y0, y1, fy) = sample_axis(y, h, out_h);
        for &(x0, x1, fx) in &cols {
            for ch in 0..c {
                let top = at(y0, x0, ch) * (1.0 - fx) + at(y0, x1, ch) * fx;
                let bottom = at(y1, x0, ch) * (1.0 - fx) + at(y1, x1, ch) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(&[out_h, out_w, c], out)
}

/// Decode, center-crop, and resize to `size × size`; values stay in `[0, 1]`.
pub fn preprocess(path: &Path, size: usize) -> Result<Tensor> {
    let img = center_crop(&load_image(path)?)?;
    if img.shape()[0] == size {
        Ok(img)
    } else {
        resize_bilinear(&img, size, size)
    }
}

/// Rotates a square image counter-clockwise by `quarter_turns × 90°`.
pub fn rotate90(img: &Tensor, quarter_turns: usize) -> Result<Tensor> {
    let (h, w, c) = dims(img)?;
    if h != w {
        return Err(Error::contract("rotation needs a square image"));
    }
    let n = h;
    let mut cur = img.clone();
    for _ in 0..quarter_turns % 4 {
        let src = cur.data();
        let mut out = vec![0.0; src.len()];
        for y in 0..n {
            for x in 0..n {
                // (y, x) ← (x, n−1−y)
                let from = (x * n + (n - 1 - y)) * c;
                let to = (y * n + x) * c;
                out[to..to + c].copy_from_slice(&src[from..from + c]);
            }
        }
        cur = Tensor::new(&[n, n, c], out)?;
    }
    Ok(cur)
}

pub fn flip_horizontal(img: &Tensor) -> Result<Tensor> {
    let (h, w, c) = dims(img)?;
    let src = img.data();
    let mut out = Vec::with_capacity(src.len());
    for y in 0..h {
        for x in (0..w).rev() {
            let from = (y * w + x) * c;
            out.extend_from_slice(&src[from..from + c]);
        }
    }
    Tensor::new(&[h, w, c], out)
}

pub fn flip_vertical(img: &Tensor) -> Result<Tensor> {
    let (h, w, c) = dims(img)?;
    let row = w * c;
    let mut out = Vec::with_capacity(h * row);
    for y in (0..h).rev() {
        out.extend_from_slice(&img.data()[y * row..(y + 1) * row]);
    }
    Tensor::new(&[h, w, c], out)
}

/// Per-channel mean and standard deviation, fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelStats {
    pub fn fit(images: &[Tensor]) -> Result<Self> {
        let first = images.first().ok_or_else(|| Error::contract("cannot fit channel stats on no images"))?;
        let (_, _, c) = dims(first)?;
        let mut sum = vec![0.0; c];
        let mut sq = vec![0.0; c];
        let mut n = 0usize;
        for img in images {
            if dims(img)?.2 != c {
                return Err(Error::contract("images disagree on channel count"));
            }
            for px in img.data().chunks(c) {
                for ch in 0..c {
                    sum[ch] += px[ch];
                    sq[ch] += px[ch] * px[ch];
                }
            }
            n += img.len() / c;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n as f64 - m * m).max(0.0).sqrt())
            .collect();
        Ok(Self { mean, std })
    }

    /// `(x − mean) / std` per channel; a zero-variance channel is only centered.
    pub fn apply(&self, img: &Tensor) -> Result<Tensor> {
        let (_, _, c) = dims(img)?;
        if c != self.mean.len() {
            return Err(Error::contract("channel stats do not match image channels"));
        }
        let mut out = img.clone();
        for px in out.data_mut().chunks_mut(c) {
            for ch in 0..c {
                let s = if self.std[ch] > 1e-12 { self.std[ch] } else { 1.0 };
                px[ch] = (px[ch] - self.mean[ch]) / s;
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Tensor {
        Tensor::new(&[h, w, 3], (0..h * w * 3).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn crop_of_square_is_identity() {
        let img = ramp(5, 5);
        assert_eq!(center_crop(&img).unwrap(), img);
        let wide = ramp(2, 4);
        let c = center_crop(&wide).unwrap();
        assert_eq!(c.shape(), &[2, 2, 3]);
        assert_eq!(c.data()[0], wide.data()[3]);
    }

    #[test]
    fn rotations_compose() {
        let img = ramp(3, 3);
        let r4 = rotate90(&rotate90(&img, 3).unwrap(), 1).unwrap();
        assert_eq!(r4, img);
        let r2 = rotate90(&img, 2).unwrap();
        assert_eq!(r2, flip_vertical(&flip_horizontal(&img).unwrap()).unwrap());
    }

    #[test]
    fn constant_image_standardizes_to_constant() {
        let img = Tensor::full(&[4, 4, 3], 0.5);
        let s = ChannelStats::fit(std::slice::from_ref(&img)).unwrap();
        let out = s.apply(&img).unwrap();
        assert!(out.data().iter().all(|&v| v == out.data()[0]));
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.png");
        let img = Tensor::new(&[2, 3, 3], (0..18).map(|v| v as f64 / 17.0).collect()).unwrap();
        save_png(&img, &p).unwrap();
        let back = load_image(&p).unwrap();
        assert_eq!(back.shape(), img.shape());
        assert!(back.max_abs_diff(&img) <= 0.5 / 255.0 + 1e-12);
        assert!(matches!(load_image(&dir.path().join("missing.png")), Err(Error::Image { .. })));
    }
}
