//! Image quality metrics on the luma channel and RGB histograms.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::error::{shape_err, Error, Result};
use crate::image::ImageBuffer;

pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

/// Single-channel real image.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(shape_err!("{} values for a {width}x{height} plane", data.len()));
        }
        Ok(Plane { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..height).flat_map(|y| (0..width).map(move |x| (x, y))).map(|(x, y)| f(x, y)).collect();
        Plane { width, height, data }
    }

    fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Full-range BT.601 luma, `0.299 R + 0.587 G + 0.114 B`.
pub fn rgb_to_y(img: &ImageBuffer) -> Plane {
    let data = img
        .as_raw()
        .chunks_exact(3)
        .map(|p| 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64)
        .collect();
    Plane {
        width: img.width(),
        height: img.height(),
        data,
    }
}

fn same_dims(a: &Plane, b: &Plane) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(shape_err!(
            "planes differ: {}x{} vs {}x{}",
            a.width,
            a.height,
            b.width,
            b.height
        ));
    }
    Ok(())
}

/// Peak 255; identical planes report [`PSNR_CAP_DB`].
pub fn psnr(a: &Plane, b: &Plane) -> Result<f64> {
    same_dims(a, b)?;
    let mse = a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len().max(1) as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (255.0 * 255.0 / mse).log10()).min(PSNR_CAP_DB))
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM over every fully contained 11×11 Gaussian window.
pub fn ssim(a: &Plane, b: &Plane) -> Result<f64> {
    same_dims(a, b)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(shape_err!(
            "{}x{} plane is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window",
            a.width,
            a.height
        ));
    }
    let c1 = (0.01f64 * 255.0).powi(2);
    let c2 = (0.03f64 * 255.0).powi(2);
    let g = gaussian_window();
    let (ow, oh) = (a.width - SSIM_WINDOW + 1, a.height - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for y0 in 0..oh {
        for x0 in 0..ow {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (dy, gy) in g.iter().enumerate() {
                for (dx, gx) in g.iter().enumerate() {
                    let w = gy * gx;
                    let (va, vb) = (a.at(x0 + dx, y0 + dy), b.at(x0 + dx, y0 + dy));
                    ma += w * va;
                    mb += w * vb;
                    saa += w * va * va;
                    sbb += w * vb * vb;
                    sab += w * va * vb;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    Ok(total / (ow * oh) as f64)
}

/// Per-channel 256-bin intensity counts over all pixels of all images.
pub fn channel_histograms<'a>(imgs: impl IntoIterator<Item = &'a ImageBuffer>) -> [[u64; 256]; 3] {
    let mut h = [[0u64; 256]; 3];
    for img in imgs {
        for px in img.as_raw().chunks_exact(3) {
            for c in 0..3 {
                h[c][px[c] as usize] += 1;
            }
        }
    }
    h
}

pub fn format_histograms(h: &[[u64; 256]; 3]) -> String {
    h.iter()
        .map(|row| row.iter().map(u64::to_string).collect::<Vec<_>>().join(","))
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageScore {
    pub name: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricReport {
    pub images: Vec<ImageScore>,
}

impl MetricReport {
    pub fn add(&mut self, name: impl Into<String>, sr: &ImageBuffer, hr: &ImageBuffer) -> Result<()> {
        let (a, b) = (rgb_to_y(sr), rgb_to_y(hr));
        self.images.push(ImageScore {
            name: name.into(),
            psnr_db: psnr(&a, &b)?,
            ssim: ssim(&a, &b)?,
        });
        Ok(())
    }

    pub fn mean_psnr(&self) -> f64 {
        self.images.iter().map(|s| s.psnr_db).sum::<f64>() / self.images.len().max(1) as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.images.iter().map(|s| s.ssim).sum::<f64>() / self.images.len().max(1) as f64
    }
}

impl fmt::Display for MetricReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "image\tpsnr_db\tssim")?;
        for s in &self.images {
            writeln!(f, "{}\t{:.4}\t{:.6}", s.name, s.psnr_db, s.ssim)?;
        }
        writeln!(f, "mean\t{:.4}\t{:.6}", self.mean_psnr(), self.mean_ssim())
    }
}

/// Score every image in `sr_dir` against the file of the same name in `hr_dir`.
pub fn evaluate_dirs(sr_dir: &Path, hr_dir: &Path) -> Result<MetricReport> {
    let mut names: Vec<String> = fs::read_dir(sr_dir)
        .map_err(|e| Error::io(sr_dir, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::io(sr_dir, "no images to evaluate"));
    }
    let mut report = MetricReport::default();
    for name in names {
        let sr = ImageBuffer::read(sr_dir.join(&name))?;
        let hr = ImageBuffer::read(hr_dir.join(&name))?;
        report.add(name, &sr, &hr)?;
    }
    Ok(report)
}
