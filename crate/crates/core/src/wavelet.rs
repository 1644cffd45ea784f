//! Separable orthonormal 2-D discrete wavelet transform.
//!
//! Filters are applied with periodic extension, which keeps the transform
//! exactly orthonormal on dyadic sizes. Rows are filtered first (horizontal
//! pass), then columns. Subband names give the horizontal filter first: `lh`
//! is low-pass along x and high-pass along y.
//!
//! Coefficient planes keep the `[h × w × C]` channel-interleaved layout of
//! the input image.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::vision::PatchConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WaveletFamily {
    #[serde(rename = "haar")]
    Haar,
    #[serde(rename = "db2")]
    Daubechies2,
}

impl std::str::FromStr for WaveletFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "haar" => Ok(WaveletFamily::Haar),
            "db2" => Ok(WaveletFamily::Daubechies2),
            other => Err(Error::domain(format!("unknown wavelet `{other}` (expected haar or db2)"))),
        }
    }
}

impl WaveletFamily {
    fn lowpass(self) -> Vec<f64> {
        match self {
            WaveletFamily::Haar => vec![std::f64::consts::FRAC_1_SQRT_2; 2],
            WaveletFamily::Daubechies2 => {
                let s3 = 3f64.sqrt();
                let norm = 4.0 * std::f64::consts::SQRT_2;
                vec![(1.0 + s3) / norm, (3.0 + s3) / norm, (3.0 - s3) / norm, (1.0 - s3) / norm]
            }
        }
    }

    fn filters(self) -> (Vec<f64>, Vec<f64>) {
        let h = self.lowpass();
        let n = h.len();
        let g = (0..n)
            .map(|j| if j % 2 == 0 { h[n - 1 - j] } else { -h[n - 1 - j] })
            .collect();
        (h, g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveletSpec {
    pub family: WaveletFamily,
    pub levels: usize,
}

impl Default for WaveletSpec {
    fn default() -> Self {
        Self {
            family: WaveletFamily::Haar,
            levels: 1,
        }
    }
}

impl WaveletSpec {
    pub fn new(family: WaveletFamily, levels: usize) -> Self {
        Self { family, levels }
    }

    /// Required divisor of every spatial extent.
    pub fn block(&self) -> usize {
        1 << self.levels
    }

    pub fn check_dims(&self, height: usize, width: usize) -> Result<()> {
        if self.levels == 0 {
            return Err(Error::contract("wavelet levels must be at least 1"));
        }
        let b = self.block();
        if !height.is_multiple_of(b) || !width.is_multiple_of(b) {
            return Err(Error::contract(format!(
                "image {height}×{width} must be divisible by 2^{} = {b} for a {}-level transform",
                self.levels, self.levels
            )));
        }
        Ok(())
    }
}

/// Detail planes of one decomposition level.
#[derive(Debug, Clone, PartialEq)]
pub struct DetailBands {
    pub lh: Tensor,
    pub hl: Tensor,
    pub hh: Tensor,
}

/// Multi-level decomposition. `details[0]` is the finest level.
#[derive(Debug, Clone, PartialEq)]
pub struct Subbands {
    pub ll: Tensor,
    pub details: Vec<DetailBands>,
}

impl Subbands {
    pub fn coefficient_count(&self) -> usize {
        self.ll.len()
            + self
                .details
                .iter()
                .map(|d| d.lh.len() + d.hl.len() + d.hh.len())
                .sum::<usize>()
    }

    /// Planes in canonical order: final LL, then per level from coarsest to
    /// finest LH, HL, HH.
    pub fn planes(&self) -> Vec<&Tensor> {
        let mut out = vec![&self.ll];
        for d in self.details.iter().rev() {
            out.extend([&d.lh, &d.hl, &d.hh]);
        }
        out
    }

    /// All coefficients in [`Subbands::planes`] order, each plane row-major.
    pub fn flatten(&self) -> Vec<f64> {
        self.planes()
            .into_iter()
            .flat_map(|p| p.data().iter().copied())
            .collect()
    }

    pub fn energy(&self) -> f64 {
        self.planes()
            .into_iter()
            .flat_map(|p| p.data())
            .map(|v| v * v)
            .sum()
    }
}

fn analyze_1d(x: &[f64], h: &[f64], g: &[f64], lo: &mut [f64], hi: &mut [f64]) {
    let n = x.len();
    for k in 0..n / 2 {
        let (mut a, mut d) = (0.0, 0.0);
        for j in 0..h.len() {
            let v = x[(2 * k + j) % n];
            a += h[j] * v;
            d += g[j] * v;
        }
        lo[k] = a;
        hi[k] = d;
    }
}

fn synthesize_1d(lo: &[f64], hi: &[f64], h: &[f64], g: &[f64], out: &mut [f64]) {
    let n = out.len();
    out.iter_mut().for_each(|v| *v = 0.0);
    for k in 0..n / 2 {
        for j in 0..h.len() {
            out[(2 * k + j) % n] += h[j] * lo[k] + g[j] * hi[k];
        }
    }
}

/// Single-channel plane, row-major.
#[derive(Clone)]
struct Plane {
    h: usize,
    w: usize,
    data: Vec<f64>,
}

impl Plane {
    fn zeros(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            data: vec![0.0; h * w],
        }
    }
}

fn split_channels(t: &Tensor) -> Result<(usize, usize, Vec<Plane>)> {
    let s = t.shape();
    let (h, w, c) = match *s {
        [h, w, c] => (h, w, c),
        [h, w] => (h, w, 1),
        _ => return Err(Error::contract(format!("expected an H×W×C image, got {s:?}"))),
    };
    let planes = (0..c)
        .map(|ch| Plane {
            h,
            w,
            data: (0..h * w).map(|i| t.data()[i * c + ch]).collect(),
        })
        .collect();
    Ok((h, w, planes))
}

fn merge_channels(planes: &[Plane]) -> Tensor {
    let (h, w, c) = (planes[0].h, planes[0].w, planes.len());
    let mut data = vec![0.0; h * w * c];
    for (ch, p) in planes.iter().enumerate() {
        for (i, v) in p.data.iter().enumerate() {
            data[i * c + ch] = *v;
        }
    }
    Tensor::new(&[h, w, c], data).expect("plane shape")
}

/// One level on one plane: returns (ll, lh, hl, hh).
fn dwt_level(p: &Plane, h: &[f64], g: &[f64]) -> [Plane; 4] {
    let (rows, cols) = (p.h, p.w);
    let (hw, hh) = (cols / 2, rows / 2);
    let mut low = Plane::zeros(rows, hw);
    let mut high = Plane::zeros(rows, hw);
    for r in 0..rows {
        analyze_1d(
            &p.data[r * cols..(r + 1) * cols],
            h,
            g,
            &mut low.data[r * hw..(r + 1) * hw],
            &mut high.data[r * hw..(r + 1) * hw],
        );
    }
    let vertical = |src: &Plane| {
        let mut lo = Plane::zeros(hh, hw);
        let mut hi = Plane::zeros(hh, hw);
        let mut col = vec![0.0; rows];
        let (mut a, mut d) = (vec![0.0; hh], vec![0.0; hh]);
        for c in 0..hw {
            for r in 0..rows {
                col[r] = src.data[r * hw + c];
            }
            analyze_1d(&col, h, g, &mut a, &mut d);
            for r in 0..hh {
                lo.data[r * hw + c] = a[r];
                hi.data[r * hw + c] = d[r];
            }
        }
        (lo, hi)
    };
    let (ll, lh) = vertical(&low);
    let (hl, hhb) = vertical(&high);
    [ll, lh, hl, hhb]
}

fn idwt_level(bands: [&Plane; 4], h: &[f64], g: &[f64]) -> Plane {
    let [ll, lh, hl, hhb] = bands;
    let (hh, hw) = (ll.h, ll.w);
    let (rows, cols) = (2 * hh, 2 * hw);
    let vertical = |lo: &Plane, hi: &Plane| {
        let mut out = Plane::zeros(rows, hw);
        let (mut a, mut d, mut col) = (vec![0.0; hh], vec![0.0; hh], vec![0.0; rows]);
        for c in 0..hw {
            for r in 0..hh {
                a[r] = lo.data[r * hw + c];
                d[r] = hi.data[r * hw + c];
            }
            synthesize_1d(&a, &d, h, g, &mut col);
            for r in 0..rows {
                out.data[r * hw + c] = col[r];
            }
        }
        out
    };
    let low = vertical(ll, lh);
    let high = vertical(hl, hhb);
    let mut out = Plane::zeros(rows, cols);
    for r in 0..rows {
        synthesize_1d(
            &low.data[r * hw..(r + 1) * hw],
            &high.data[r * hw..(r + 1) * hw],
            h,
            g,
            &mut out.data[r * cols..(r + 1) * cols],
        );
    }
    out
}

/// Forward transform of an `H×W×C` (or `H×W`) image.
pub fn dwt2(image: &Tensor, spec: &WaveletSpec) -> Result<Subbands> {
    let (height, width, planes) = split_channels(image)?;
    spec.check_dims(height, width)?;
    let (h, g) = spec.family.filters();
    let mut current = planes;
    let mut details = Vec::with_capacity(spec.levels);
    for _ in 0..spec.levels {
        let per_channel: Vec<[Plane; 4]> = current.iter().map(|p| dwt_level(p, &h, &g)).collect();
        let pick = |i: usize| merge_channels(&per_channel.iter().map(|b| b[i].clone()).collect::<Vec<_>>());
        details.push(DetailBands {
            lh: pick(1),
            hl: pick(2),
            hh: pick(3),
        });
        current = per_channel.into_iter().map(|[ll, ..]| ll).collect();
    }
    Ok(Subbands {
        ll: merge_channels(&current),
        details,
    })
}

/// Inverse of [`dwt2`]. Output is always `H×W×C`.
pub fn idwt2(s: &Subbands, spec: &WaveletSpec) -> Result<Tensor> {
    if s.details.len() != spec.levels {
        return Err(Error::contract(format!(
            "subbands hold {} levels but the spec asks for {}",
            s.details.len(),
            spec.levels
        )));
    }
    let (h, g) = spec.family.filters();
    let (_, _, mut current) = split_channels(&s.ll)?;
    for d in s.details.iter().rev() {
        let (_, _, lh) = split_channels(&d.lh)?;
        let (_, _, hl) = split_channels(&d.hl)?;
        let (_, _, hh) = split_channels(&d.hh)?;
        let consistent = [&lh, &hl, &hh].iter().all(|bands| {
            bands.len() == current.len()
                && bands.iter().all(|p| p.h == current[0].h && p.w == current[0].w)
        });
        if !consistent {
            return Err(Error::contract(format!(
                "inconsistent subband shapes: LL {:?}, LH {:?}, HL {:?}, HH {:?}",
                merge_channels(&current).shape(),
                d.lh.shape(),
                d.hl.shape(),
                d.hh.shape()
            )));
        }
        current = (0..current.len())
            .map(|c| idwt_level([&current[c], &lh[c], &hl[c], &hh[c]], &h, &g))
            .collect();
    }
    Ok(merge_channels(&current))
}

/// Copies the `b×b` block at block-grid cell `(br, bc)` of an `h×w×C` plane.
fn push_block(plane: &Tensor, br: usize, bc: usize, b: usize, out: &mut Vec<f64>) {
    let (w, c) = (plane.shape()[1], plane.shape()[2]);
    for y in br * b..(br + 1) * b {
        let start = (y * w + bc * b) * c;
        out.extend_from_slice(&plane.data()[start..start + b * c]);
    }
}

/// Per-patch wavelet coefficients, co-located with each patch of the ViT
/// grid, in [`Subbands::planes`] order. Row `i` belongs to patch `i` in
/// row-major grid order; every row has `P²·C` entries.
pub fn wavelet_patch_features(
    image: &Tensor,
    patch: &PatchConfig,
    spec: &WaveletSpec,
) -> Result<Tensor> {
    patch.check_image(image)?;
    let p = patch.patch_size;
    if !p.is_multiple_of(spec.block()) {
        return Err(Error::contract(format!(
            "patch size {p} is not aligned with the {}-level subband grid (needs a multiple of {})",
            spec.levels,
            spec.block()
        )));
    }
    let bands = dwt2(image, spec)?;
    let grid = patch.grid();
    let width = patch.wavelet_width();
    let mut data = Vec::with_capacity(patch.patch_count() * width);
    for pr in 0..grid {
        for pc in 0..grid {
            push_block(&bands.ll, pr, pc, p >> spec.levels, &mut data);
            for (level, d) in bands.details.iter().enumerate().rev() {
                let b = p >> (level + 1);
                for plane in [&d.lh, &d.hl, &d.hh] {
                    push_block(plane, pr, pc, b, &mut data);
                }
            }
        }
    }
    Tensor::new(&[patch.patch_count(), width], data)
}
