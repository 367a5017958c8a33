//! Synthetic camera-screen degradation: blur, colour distortion, downsampling
//! and noise applied twice (screen, then camera) to manufacture paired data.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::ConfigFile;
use crate::error::{config_err, shape_err, Error, Result};
use crate::image::{quantize, ImageBuffer};

#[derive(Clone, Debug, PartialEq)]
pub struct DegradationParams {
    pub screen_blur_sigma: f64,
    pub screen_scale: usize,
    pub screen_noise_sigma: f64,
    pub color_gain: [f64; 3],
    pub color_bias: [f64; 3],
    pub gamma: f64,
    pub camera_blur_sigma: f64,
    pub camera_scale: usize,
    pub camera_noise_sigma: f64,
    pub seed: u64,
}

impl Default for DegradationParams {
    fn default() -> Self {
        DegradationParams {
            screen_blur_sigma: 0.6,
            screen_scale: 1,
            screen_noise_sigma: 0.01,
            color_gain: [1.05, 1.0, 0.95],
            color_bias: [0.02, 0.0, -0.02],
            gamma: 0.9,
            camera_blur_sigma: 1.0,
            camera_scale: 4,
            camera_noise_sigma: 0.01,
            seed: 0,
        }
    }
}

impl DegradationParams {
    /// No blur, no noise, no colour change: plain box downsampling by `scale`.
    pub fn identity(scale: usize) -> Self {
        DegradationParams {
            screen_blur_sigma: 0.0,
            screen_scale: 1,
            screen_noise_sigma: 0.0,
            color_gain: [1.0; 3],
            color_bias: [0.0; 3],
            gamma: 1.0,
            camera_blur_sigma: 0.0,
            camera_scale: scale,
            camera_noise_sigma: 0.0,
            seed: 0,
        }
    }

    /// Override the fields named in `c` (see [`DEGRADATION_KEYS`]).
    pub fn from_config(c: &ConfigFile, base: DegradationParams) -> Result<Self> {
        c.reject_unknown(&DEGRADATION_KEYS)?;
        let p = DegradationParams {
            screen_blur_sigma: c.get_or("screen_blur_sigma", base.screen_blur_sigma)?,
            screen_scale: c.get_or("screen_scale", base.screen_scale)?,
            screen_noise_sigma: c.get_or("screen_noise_sigma", base.screen_noise_sigma)?,
            color_gain: c.get_array3("color_gain")?.unwrap_or(base.color_gain),
            color_bias: c.get_array3("color_bias")?.unwrap_or(base.color_bias),
            gamma: c.get_or("gamma", base.gamma)?,
            camera_blur_sigma: c.get_or("camera_blur_sigma", base.camera_blur_sigma)?,
            camera_scale: c.get_or("camera_scale", base.camera_scale)?,
            camera_noise_sigma: c.get_or("camera_noise_sigma", base.camera_noise_sigma)?,
            seed: c.get_or("seed", base.seed)?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn total_scale(&self) -> usize {
        self.screen_scale * self.camera_scale
    }

    pub fn validate(&self) -> Result<()> {
        let sigmas = [
            self.screen_blur_sigma,
            self.screen_noise_sigma,
            self.camera_blur_sigma,
            self.camera_noise_sigma,
        ];
        if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(config_err!("degradation sigmas must be finite and non-negative"));
        }
        if self.color_gain.iter().any(|g| !(*g > 0.0)) || !(self.gamma > 0.0) {
            return Err(config_err!("colour gains and gamma must be positive"));
        }
        if self.screen_scale == 0 || self.camera_scale == 0 {
            return Err(config_err!("degradation scales must be positive"));
        }
        Ok(())
    }
}

pub const DEGRADATION_KEYS: [&str; 10] = [
    "screen_blur_sigma",
    "screen_scale",
    "screen_noise_sigma",
    "color_gain",
    "color_bias",
    "gamma",
    "camera_blur_sigma",
    "camera_scale",
    "camera_noise_sigma",
    "seed",
];

/// Normalized isotropic Gaussian of size `(2r+1)^2`, row-major. `sigma = 0`
/// gives the delta kernel.
pub fn gaussian_kernel(sigma: f64, radius: usize) -> Vec<f64> {
    let n = 2 * radius + 1;
    let mut k = vec![0.0; n * n];
    if sigma <= 0.0 {
        k[radius * n + radius] = 1.0;
        return k;
    }
    let r = radius as f64;
    for y in 0..n {
        for x in 0..n {
            let (dy, dx) = (y as f64 - r, x as f64 - r);
            k[y * n + x] = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
        }
    }
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Default support: `ceil(3 sigma)`.
pub fn kernel_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil() as usize
}

/// Floating-point RGB image in `[0, 1]`, channel-planar.
#[derive(Clone, Debug, PartialEq)]
pub struct Planes {
    pub width: usize,
    pub height: usize,
    pub data: [Vec<f64>; 3],
}

impl Planes {
    pub fn from_image(img: &ImageBuffer) -> Self {
        let (w, h) = img.dims();
        let mut data = [vec![0.0; w * h], vec![0.0; w * h], vec![0.0; w * h]];
        for (i, px) in img.as_raw().chunks_exact(3).enumerate() {
            for c in 0..3 {
                data[c][i] = px[c] as f64 / 255.0;
            }
        }
        Planes {
            width: w,
            height: h,
            data,
        }
    }

    pub fn to_image(&self) -> ImageBuffer {
        ImageBuffer::from_fn(self.width, self.height, |x, y| {
            let i = y * self.width + x;
            [0, 1, 2].map(|c| quantize(self.data[c][i]))
        })
    }

    fn map_channels(&mut self, f: impl Fn(usize, f64) -> f64) {
        for (c, plane) in self.data.iter_mut().enumerate() {
            plane.iter_mut().for_each(|v| *v = f(c, *v));
        }
    }

    /// Convolution with edge replication.
    pub fn blur(&self, sigma: f64) -> Self {
        if sigma <= 0.0 {
            return self.clone();
        }
        let r = kernel_radius(sigma);
        let k = gaussian_kernel(sigma, r);
        let n = 2 * r + 1;
        let (w, h) = (self.width as isize, self.height as isize);
        let data = self.data.clone().map(|plane| {
            let mut out = vec![0.0; plane.len()];
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for ky in 0..n {
                        let sy = (y + ky as isize - r as isize).clamp(0, h - 1);
                        for kx in 0..n {
                            let sx = (x + kx as isize - r as isize).clamp(0, w - 1);
                            acc += k[ky * n + kx] * plane[(sy * w + sx) as usize];
                        }
                    }
                    out[(y * w + x) as usize] = acc;
                }
            }
            out
        });
        Planes {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Mean over non-overlapping `f × f` cells.
    pub fn box_downsample(&self, f: usize) -> Result<Self> {
        if !self.width.is_multiple_of(f) || !self.height.is_multiple_of(f) {
            return Err(shape_err!(
                "{}x{} image is not divisible by {f}",
                self.width,
                self.height
            ));
        }
        if f == 1 {
            return Ok(self.clone());
        }
        let (ow, oh) = (self.width / f, self.height / f);
        let norm = (f * f) as f64;
        let data = self.data.clone().map(|plane| {
            let mut out = vec![0.0; ow * oh];
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = 0.0;
                    for dy in 0..f {
                        let row = (y * f + dy) * self.width + x * f;
                        acc += plane[row..row + f].iter().sum::<f64>();
                    }
                    out[y * ow + x] = acc / norm;
                }
            }
            out
        });
        Ok(Planes {
            width: ow,
            height: oh,
            data,
        })
    }

    fn add_noise<R: Rng + ?Sized>(&mut self, sigma: f64, rng: &mut R) {
        if sigma <= 0.0 {
            return;
        }
        let normal = Normal::new(0.0, sigma).expect("sigma validated");
        for plane in &mut self.data {
            plane.iter_mut().for_each(|v| *v += normal.sample(rng));
        }
    }
}

/// Full degradation chain, seeded by `p.seed`.
pub fn degrade(y: &ImageBuffer, p: &DegradationParams) -> Result<ImageBuffer> {
    Ok(degrade_planes(y, p)?.to_image())
}

/// [`degrade`] before 8-bit quantization (values clamped to `[0, 1]`).
pub fn degrade_planes(y: &ImageBuffer, p: &DegradationParams) -> Result<Planes> {
    p.validate()?;
    let s = p.total_scale();
    let (w, h) = y.dims();
    if w % s != 0 || h % s != 0 {
        return Err(shape_err!("{w}x{h} image is not divisible by the total scale {s}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut x = Planes::from_image(y).blur(p.screen_blur_sigma);
    x.map_channels(|c, v| (p.color_gain[c] * v.max(0.0).powf(p.gamma) + p.color_bias[c]).clamp(0.0, 1.0));
    let mut x = x.box_downsample(p.screen_scale)?;
    x.add_noise(p.screen_noise_sigma, &mut rng);
    let mut x = x.blur(p.camera_blur_sigma).box_downsample(p.camera_scale)?;
    x.add_noise(p.camera_noise_sigma, &mut rng);
    x.map_channels(|_, v| v.clamp(0.0, 1.0));
    Ok(x)
}

/// Screen-like test content: gradients, flat panels, thin strokes and a disc.
pub fn synthetic_hr(width: usize, height: usize, seed: u64) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let tilt: [f64; 2] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    let panels: Vec<([usize; 4], [f64; 3])> = (0..4)
        .map(|_| {
            let x0 = rng.random_range(0..width);
            let y0 = rng.random_range(0..height);
            let pw = rng.random_range(width / 8..width / 2 + 1);
            let ph = rng.random_range(height / 8..height / 2 + 1);
            ([x0, y0, pw, ph], [rng.random(), rng.random(), rng.random()])
        })
        .collect();
    let stroke_period = rng.random_range(3..7usize);
    let stroke_color: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let (cx, cy) = (rng.random_range(0.2..0.8) * width as f64, rng.random_range(0.2..0.8) * height as f64);
    let radius = rng.random_range(0.1..0.3) * width.min(height) as f64;
    let disc_color: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    let text_band = rng.random_range(0..height.max(1));

    ImageBuffer::from_fn(width, height, |x, y| {
        let (u, v) = (x as f64 / width as f64, y as f64 / height as f64);
        let mut px = base.map(|b| 0.5 * b + 0.25 * (1.0 + tilt[0] * u + tilt[1] * v));
        for ([x0, y0, pw, ph], col) in &panels {
            if x >= *x0 && x < x0 + pw && y >= *y0 && y < y0 + ph {
                px = *col;
            }
        }
        let dx = x as f64 - cx;
        let dy = y as f64 - cy;
        if dx * dx + dy * dy < radius * radius {
            px = disc_color;
        }
        // rows of glyph-like vertical strokes
        let in_band = y >= text_band && y < text_band + height / 6;
        if in_band && x % stroke_period == 0 && (x / stroke_period + y / 3) % 3 != 0 {
            px = stroke_color;
        }
        px.map(quantize)
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetPair {
    pub hr: PathBuf,
    pub lr: PathBuf,
}

pub const MANIFEST_NAME: &str = "manifest.txt";

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "ppm" | "png"))
        })
        .collect();
    out.sort();
    Ok(out)
}

/// Degrade the first `n_pairs` images of `hr_dir` (sorted by name) into
/// `out_dir/{hr,lr}/` and write `out_dir/manifest.txt`. Image `i` uses seed
/// `p.seed + i`.
pub fn make_dataset(hr_dir: &Path, out_dir: &Path, p: &DegradationParams, n_pairs: usize) -> Result<Vec<DatasetPair>> {
    p.validate()?;
    let files = list_images(hr_dir)?;
    if files.len() < n_pairs {
        return Err(Error::io(
            hr_dir,
            format!("found {} images, {n_pairs} requested", files.len()),
        ));
    }
    let mut images = Vec::with_capacity(n_pairs);
    let mut failures = Vec::new();
    for f in &files[..n_pairs] {
        match ImageBuffer::read(f) {
            Ok(img) => images.push((f, img)),
            Err(e) => failures.push(e.to_string()),
        }
    }
    if !failures.is_empty() {
        return Err(Error::io(hr_dir, format!("unreadable inputs: {}", failures.join("; "))));
    }
    for sub in ["hr", "lr"] {
        fs::create_dir_all(out_dir.join(sub)).map_err(|e| Error::io(out_dir.join(sub), e))?;
    }
    let mut pairs = Vec::with_capacity(n_pairs);
    let mut manifest = String::new();
    for (i, (src, img)) in images.iter().enumerate() {
        let params = DegradationParams {
            seed: p.seed.wrapping_add(i as u64),
            ..p.clone()
        };
        let lr = degrade(img, &params).map_err(|e| Error::io(*src, e))?;
        let stem = src.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        let hr_rel = PathBuf::from("hr").join(format!("{stem}.ppm"));
        let lr_rel = PathBuf::from("lr").join(format!("{stem}.ppm"));
        img.write(out_dir.join(&hr_rel))?;
        lr.write(out_dir.join(&lr_rel))?;
        manifest.push_str(&format!("{}\t{}\n", hr_rel.display(), lr_rel.display()));
        pairs.push(DatasetPair {
            hr: out_dir.join(hr_rel),
            lr: out_dir.join(lr_rel),
        });
    }
    let mpath = out_dir.join(MANIFEST_NAME);
    fs::write(&mpath, manifest).map_err(|e| Error::io(&mpath, e))?;
    Ok(pairs)
}

/// Parse a `hr<TAB>lr` manifest; relative paths resolve against its directory.
pub fn read_manifest(path: &Path) -> Result<Vec<DatasetPair>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((hr, lr)) = line.split_once('\t') else {
            return Err(Error::io(path, format!("line {}: expected 'hr<TAB>lr'", n + 1)));
        };
        out.push(DatasetPair {
            hr: base.join(hr),
            lr: base.join(lr),
        });
    }
    if out.is_empty() {
        return Err(Error::io(path, "manifest lists no pairs"));
    }
    Ok(out)
}
