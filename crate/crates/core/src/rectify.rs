//! Multi-shot rectification: homography estimation from point correspondences,
//! RANSAC, inverse warping, shot averaging and bicubic resampling.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_err, Error, Result};
use crate::image::ImageBuffer;

/// `src` is a point in the captured shot, `dst` the matching point in the reference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Correspondence {
    pub src: [f64; 2],
    pub dst: [f64; 2],
}

/// Projective map `src -> dst` with `m[2][2] == 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Homography {
    pub m: [[f64; 3]; 3],
}

pub const MIN_DET: f64 = 1e-12;

impl Homography {
    pub fn identity() -> Self {
        Homography {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn translation(tx: f64, ty: f64) -> Self {
        Homography {
            m: [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]],
        }
    }

    /// Scale so that `m[2][2] == 1`.
    pub fn from_matrix(m: [[f64; 3]; 3]) -> Result<Self> {
        if m[2][2].abs() < MIN_DET || m.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Estimation("homography cannot be normalized".into()));
        }
        let k = m[2][2];
        Ok(Homography {
            m: m.map(|row| row.map(|v| v / k)),
        })
    }

    pub fn det(&self) -> f64 {
        let m = &self.m;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn inverse(&self) -> Result<Self> {
        let d = self.det();
        if d.abs() < MIN_DET {
            return Err(Error::Estimation(format!("singular homography (det = {d:e})")));
        }
        let m = &self.m;
        let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
        let adj = [
            [c(1, 2, 1, 2), -c(0, 2, 1, 2), c(0, 1, 1, 2)],
            [-c(1, 2, 0, 2), c(0, 2, 0, 2), -c(0, 1, 0, 2)],
            [c(1, 2, 0, 1), -c(0, 2, 0, 1), c(0, 1, 0, 1)],
        ];
        Self::from_matrix(adj.map(|row| row.map(|v| v / d)))
    }

    pub fn compose(&self, other: &Homography) -> Result<Self> {
        Self::from_matrix(matmul(&self.m, &other.m))
    }

    /// `None` for points mapped to infinity.
    pub fn apply(&self, p: [f64; 2]) -> Option<[f64; 2]> {
        let m = &self.m;
        let w = m[2][0] * p[0] + m[2][1] * p[1] + m[2][2];
        if w.abs() < 1e-15 {
            return None;
        }
        Some([
            (m[0][0] * p[0] + m[0][1] * p[1] + m[0][2]) / w,
            (m[1][0] * p[0] + m[1][1] * p[1] + m[1][2]) / w,
        ])
    }

    /// Euclidean distance between `H(src)` and `dst`.
    pub fn transfer_error(&self, c: &Correspondence) -> f64 {
        match self.apply(c.src) {
            Some(p) => ((p[0] - c.dst[0]).powi(2) + (p[1] - c.dst[1]).powi(2)).sqrt(),
            None => f64::INFINITY,
        }
    }
}

fn matmul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

/// Similarity taking the points' centroid to the origin and their mean
/// distance from it to `sqrt(2)`.
fn normalizer(pts: impl Iterator<Item = [f64; 2]> + Clone) -> Result<[[f64; 3]; 3]> {
    let n = pts.clone().count() as f64;
    let (cx, cy) = pts.clone().fold((0.0, 0.0), |(a, b), p| (a + p[0], b + p[1]));
    let (cx, cy) = (cx / n, cy / n);
    let mean_dist = pts.map(|p| ((p[0] - cx).powi(2) + (p[1] - cy).powi(2)).sqrt()).sum::<f64>() / n;
    if mean_dist < 1e-12 {
        return Err(Error::Estimation("all points coincide".into()));
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Ok([[s, 0.0, -s * cx], [0.0, s, -s * cy], [0.0, 0.0, 1.0]])
}

fn transform(t: &[[f64; 3]; 3], p: [f64; 2]) -> [f64; 2] {
    [t[0][0] * p[0] + t[0][1] * p[1] + t[0][2], t[1][0] * p[0] + t[1][1] * p[1] + t[1][2]]
}

/// Solve `a x = b` by Gaussian elimination with partial pivoting.
fn solve8(mut a: [[f64; 8]; 8], mut b: [f64; 8]) -> Result<[f64; 8]> {
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..8 {
        let piv = (col..8)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .expect("non-empty range");
        if a[piv][col].abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::Estimation(
                "degenerate correspondence configuration (singular system)".into(),
            ));
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..8 {
            let f = a[r][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for c in col..8 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 8];
    for r in (0..8).rev() {
        let s: f64 = (r + 1..8).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Ok(x)
}

/// Direct linear transform with `h33 = 1`, solved through the normal equations.
/// With `normalize`, coordinates are first conditioned by a similarity on each side.
pub fn estimate_homography_dlt_with(corrs: &[Correspondence], normalize: bool) -> Result<Homography> {
    if corrs.len() < 4 {
        return Err(Error::Estimation(format!(
            "need at least 4 correspondences, got {}",
            corrs.len()
        )));
    }
    if corrs.iter().any(|c| c.src.iter().chain(&c.dst).any(|v| !v.is_finite())) {
        return Err(Error::Estimation("non-finite correspondence".into()));
    }
    let ident = Homography::identity().m;
    let (ts, td) = if normalize {
        (
            normalizer(corrs.iter().map(|c| c.src))?,
            normalizer(corrs.iter().map(|c| c.dst))?,
        )
    } else {
        (ident, ident)
    };
    let mut ata = [[0.0; 8]; 8];
    let mut atb = [0.0; 8];
    for c in corrs {
        let [x, y] = transform(&ts, c.src);
        let [u, v] = transform(&td, c.dst);
        let rows = [
            ([x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y], u),
            ([0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y], v),
        ];
        for (r, rhs) in rows {
            for i in 0..8 {
                atb[i] += r[i] * rhs;
                for j in 0..8 {
                    ata[i][j] += r[i] * r[j];
                }
            }
        }
    }
    let h = solve8(ata, atb)?;
    let hn = [[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]];
    let td_inv = Homography { m: td }.inverse()?.m;
    let out = Homography::from_matrix(matmul(&td_inv, &matmul(&hn, &ts)))?;
    if out.det().abs() < MIN_DET {
        return Err(Error::Estimation("estimated homography is singular".into()));
    }
    Ok(out)
}

pub fn estimate_homography_dlt(corrs: &[Correspondence]) -> Result<Homography> {
    estimate_homography_dlt_with(corrs, true)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacOptions {
    pub threshold_px: f64,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for RansacOptions {
    fn default() -> Self {
        RansacOptions {
            threshold_px: 1.0,
            iterations: 500,
            seed: 0,
        }
    }
}

fn inliers_of(h: &Homography, corrs: &[Correspondence], threshold: f64) -> Vec<usize> {
    (0..corrs.len()).filter(|&i| h.transfer_error(&corrs[i]) < threshold).collect()
}

/// Best-consensus homography over random minimal samples, refit on its inliers.
/// Returns the refit and the indices whose transfer error is below the threshold.
pub fn ransac_homography(corrs: &[Correspondence], opts: &RansacOptions) -> Result<(Homography, Vec<usize>)> {
    if corrs.len() < 4 {
        return Err(Error::Estimation(format!(
            "need at least 4 correspondences, got {}",
            corrs.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Vec<usize> = Vec::new();
    let mut subset = Vec::with_capacity(4);
    for _ in 0..opts.iterations {
        subset.clear();
        subset.extend(sample(&mut rng, corrs.len(), 4).iter().map(|i| corrs[i]));
        let Ok(h) = estimate_homography_dlt(&subset) else {
            continue;
        };
        let inl = inliers_of(&h, corrs, opts.threshold_px);
        if inl.len() > best.len() {
            best = inl;
        }
    }
    if best.len() < 4 {
        return Err(Error::Estimation(format!(
            "RANSAC consensus of {} is below the minimum of 4",
            best.len()
        )));
    }
    let chosen: Vec<_> = best.iter().map(|&i| corrs[i]).collect();
    let h = estimate_homography_dlt(&chosen)?;
    let refit = inliers_of(&h, corrs, opts.threshold_px);
    if refit.len() < 4 {
        return Err(Error::Estimation("refit lost consensus".into()));
    }
    Ok((h, refit))
}

/// Bilinear sample at real pixel coordinates; `None` outside the image.
fn sample_bilinear(img: &ImageBuffer, x: f64, y: f64) -> Option<[f64; 3]> {
    let (w, h) = img.dims();
    const EPS: f64 = 1e-9;
    if !(x >= -EPS && y >= -EPS && x <= (w - 1) as f64 + EPS && y <= (h - 1) as f64 + EPS) {
        return None;
    }
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let (p00, p10, p01, p11) = (img.get(x0, y0), img.get(x1, y0), img.get(x0, y1), img.get(x1, y1));
    Some([0, 1, 2].map(|c| {
        let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
        let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
        top * (1.0 - fy) + bottom * fy
    }))
}

fn round_u8(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Inverse warp into the `h`-target frame: `out[p] = img(H^-1 p)`, zero outside.
pub fn warp_bilinear(img: &ImageBuffer, h: &Homography, out_w: usize, out_h: usize) -> Result<ImageBuffer> {
    let inv = h.inverse()?;
    Ok(ImageBuffer::from_fn(out_w, out_h, |x, y| {
        inv.apply([x as f64, y as f64])
            .and_then(|[sx, sy]| sample_bilinear(img, sx, sy))
            .map_or([0; 3], |px| px.map(round_u8))
    }))
}

/// Per-pixel mean, rounded half up.
pub fn average_stack(imgs: &[ImageBuffer]) -> Result<ImageBuffer> {
    let Some(first) = imgs.first() else {
        return Err(shape_err!("cannot average an empty stack"));
    };
    if let Some(bad) = imgs.iter().find(|i| i.dims() != first.dims()) {
        return Err(shape_err!("stack mixes {:?} and {:?} images", first.dims(), bad.dims()));
    }
    let n = imgs.len() as u64;
    let data = (0..first.as_raw().len())
        .map(|i| {
            let s: u64 = imgs.iter().map(|img| img.as_raw()[i] as u64).sum();
            ((2 * s + n) / (2 * n)) as u8
        })
        .collect();
    ImageBuffer::from_raw(first.width(), first.height(), data)
}

/// Catmull-Rom cubic (`a = -0.5`).
pub fn cubic_kernel(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x < 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Normalized taps `(first_index, weights)` per output sample. When shrinking,
/// the kernel is stretched by the scale factor (antialiasing).
fn resample_taps(in_size: usize, out_size: usize) -> Vec<(usize, Vec<f64>)> {
    let scale = in_size as f64 / out_size as f64;
    let filter_scale = scale.max(1.0);
    let support = 2.0 * filter_scale;
    (0..out_size)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale;
            let lo = ((center - support + 0.5).floor().max(0.0)) as usize;
            let hi = ((center + support + 0.5).floor() as usize).min(in_size);
            let mut w: Vec<f64> = (lo..hi)
                .map(|j| cubic_kernel((j as f64 - center + 0.5) / filter_scale))
                .collect();
            let total: f64 = w.iter().sum();
            if total != 0.0 {
                w.iter_mut().for_each(|v| *v /= total);
            }
            (lo, w)
        })
        .collect()
}

/// Separable bicubic resampling to `out_w × out_h`: a horizontal pass
/// quantized to 8 bits, then a vertical pass.
pub fn resize_bicubic(img: &ImageBuffer, out_w: usize, out_h: usize) -> Result<ImageBuffer> {
    let (w, h) = img.dims();
    if out_w == 0 || out_h == 0 || w == 0 || h == 0 {
        return Err(shape_err!("cannot resize {w}x{h} to {out_w}x{out_h}"));
    }
    let xt = resample_taps(w, out_w);
    let yt = resample_taps(h, out_h);
    let mut horiz = vec![0.0; out_w * h * 3];
    for y in 0..h {
        for (ox, (lo, ws)) in xt.iter().enumerate() {
            for c in 0..3 {
                let v: f64 = ws.iter().enumerate().map(|(k, wk)| wk * img.get(lo + k, y)[c] as f64).sum();
                horiz[(y * out_w + ox) * 3 + c] = round_u8(v) as f64;
            }
        }
    }
    Ok(ImageBuffer::from_fn(out_w, out_h, |x, oy| {
        let (lo, ws) = &yt[oy];
        [0, 1, 2].map(|c| {
            round_u8(ws.iter().enumerate().map(|(k, wk)| wk * horiz[((lo + k) * out_w + x) * 3 + c]).sum())
        })
    }))
}

pub fn downscale_bicubic(img: &ImageBuffer, factor: usize) -> Result<ImageBuffer> {
    let (w, h) = img.dims();
    if factor == 0 || w % factor != 0 || h % factor != 0 {
        return Err(shape_err!("{w}x{h} image is not divisible by {factor}"));
    }
    if factor == 1 {
        return Ok(img.clone());
    }
    resize_bicubic(img, w / factor, h / factor)
}

pub fn upscale_bicubic(img: &ImageBuffer, factor: usize) -> Result<ImageBuffer> {
    if factor == 0 {
        return Err(shape_err!("upscale factor must be positive"));
    }
    resize_bicubic(img, img.width() * factor, img.height() * factor)
}

/// Parse `x1 y1 x2 y2` lines (source then destination). Blank lines and
/// `#` comments are skipped.
pub fn parse_correspondences(text: &str) -> std::result::Result<Vec<Correspondence>, String> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format!("line {}: {e}", n + 1))?;
        let [x1, y1, x2, y2] = vals[..] else {
            return Err(format!("line {}: expected 4 numbers, got {}", n + 1, vals.len()));
        };
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(format!("line {}: non-finite coordinate", n + 1));
        }
        out.push(Correspondence {
            src: [x1, y1],
            dst: [x2, y2],
        });
    }
    Ok(out)
}

pub fn read_correspondences(path: &Path) -> Result<Vec<Correspondence>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_correspondences(&text).map_err(|m| Error::io(path, m))
}

/// Align every shot to the reference frame with its own RANSAC homography and
/// average the aligned stack.
pub fn rectify_shots(
    shots: &[ImageBuffer],
    corrs: &[Vec<Correspondence>],
    ref_dims: (usize, usize),
    opts: &RansacOptions,
) -> Result<ImageBuffer> {
    if shots.len() != corrs.len() || shots.is_empty() {
        return Err(shape_err!(
            "{} shots but {} correspondence sets",
            shots.len(),
            corrs.len()
        ));
    }
    let aligned = shots
        .iter()
        .zip(corrs)
        .enumerate()
        .map(|(i, (shot, c))| {
            let o = RansacOptions {
                seed: opts.seed.wrapping_add(i as u64),
                ..*opts
            };
            let (h, _) = ransac_homography(c, &o)?;
            warp_bilinear(shot, &h, ref_dims.0, ref_dims.1)
        })
        .collect::<Result<Vec<_>>>()?;
    average_stack(&aligned)
}
