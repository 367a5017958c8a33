use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use cssr_core::rectify::{
    average_stack, estimate_homography_dlt, ransac_homography, rectify_shots, warp_bilinear, Correspondence,
    Homography, RansacOptions,
};
use cssr_core::ImageBuffer;

fn planted() -> Homography {
    Homography::from_matrix([[1.05, 0.08, 12.0], [-0.06, 0.97, -7.5], [2e-4, -1.5e-4, 1.0]]).unwrap()
}

fn planted_set(n: usize, inlier_frac: f64, seed: u64) -> (Vec<Correspondence>, Vec<usize>) {
    let h = planted();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_in = (n as f64 * inlier_frac).round() as usize;
    let mut corrs = Vec::with_capacity(n);
    for i in 0..n {
        let src = [rng.random_range(0.0..320.0), rng.random_range(0.0..240.0)];
        let mut dst = h.apply(src).unwrap();
        if i >= n_in {
            // push outliers well beyond the threshold
            let ang: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let r: f64 = rng.random_range(15.0..60.0);
            dst = [dst[0] + r * ang.cos(), dst[1] + r * ang.sin()];
        }
        corrs.push(Correspondence { src, dst });
    }
    (corrs, (0..n_in).collect())
}

#[test]
fn ransac_recovers_planted_homography_at_seventy_percent_inliers() {
    for seed in 0..5 {
        let (corrs, truth) = planted_set(100, 0.7, seed);
        let (h, inliers) = ransac_homography(&corrs, &RansacOptions { seed, ..Default::default() }).unwrap();
        assert_eq!(inliers, truth, "seed {seed}");
        let worst = truth.iter().map(|&i| h.transfer_error(&corrs[i])).fold(0.0, f64::max);
        assert!(worst < 0.5, "seed {seed}: {worst}");
        let p = planted();
        for probe in [[0.0, 0.0], [160.0, 120.0], [320.0, 240.0]] {
            let (a, b) = (h.apply(probe).unwrap(), p.apply(probe).unwrap());
            assert!((a[0] - b[0]).hypot(a[1] - b[1]) < 1e-6);
        }
    }
}

#[test]
fn dlt_exact_on_four_noiseless_points() {
    let h = planted();
    let src = [[3.0, 5.0], [250.0, 11.0], [240.0, 200.0], [17.0, 190.0]];
    let corrs: Vec<_> = src.iter().map(|&s| Correspondence { src: s, dst: h.apply(s).unwrap() }).collect();
    let est = estimate_homography_dlt(&corrs).unwrap();
    for c in &corrs {
        assert!(est.transfer_error(c) < 1e-8, "{}", est.transfer_error(c));
    }
}

fn ramp(w: usize, h: usize) -> ImageBuffer {
    ImageBuffer::from_fn(w, h, |x, y| [(x * 20 + 10) as u8, (y * 25 + 5) as u8, ((x + y) * 9) as u8])
}

#[test]
fn translation_warps_shift_content() {
    let img = ramp(8, 6);
    let right = warp_bilinear(&img, &Homography::translation(1.0, 0.0), 8, 6).unwrap();
    let left = warp_bilinear(&img, &Homography::translation(-1.0, 0.0), 8, 6).unwrap();
    for y in 0..6 {
        assert_eq!(right.get(0, y), [0; 3]);
        assert_eq!(left.get(7, y), [0; 3]);
        for x in 1..8 {
            assert_eq!(right.get(x, y), img.get(x - 1, y));
            assert_eq!(left.get(x - 1, y), img.get(x, y));
        }
    }
    assert_eq!(warp_bilinear(&img, &Homography::identity(), 8, 6).unwrap(), img);
}

#[test]
fn affine_warp_round_trip_on_linear_image() {
    // bilinear interpolation reproduces linear content, so only rounding remains
    let img = ImageBuffer::from_fn(48, 48, |x, y| [(2 * x + y + 30) as u8, (x + 3 * y) as u8, (4 * x) as u8]);
    let h = Homography::from_matrix([[0.98, 0.05, 1.5], [-0.04, 1.01, -0.75], [0.0, 0.0, 1.0]]).unwrap();
    let fwd = warp_bilinear(&img, &h, 48, 48).unwrap();
    let back = warp_bilinear(&fwd, &h.inverse().unwrap(), 48, 48).unwrap();
    for y in 6..42 {
        for x in 6..42 {
            let (a, b) = (img.get(x, y), back.get(x, y));
            for c in 0..3 {
                assert!((a[c] as i32 - b[c] as i32).abs() <= 2, "({x},{y}) {a:?} vs {b:?}");
            }
        }
    }
}

fn channel_std(img: &ImageBuffer) -> f64 {
    let v: Vec<f64> = img.as_raw().iter().map(|&p| p as f64).collect();
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|p| (p - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt()
}

#[test]
fn averaging_shrinks_independent_noise() {
    let sigma = 8.0;
    let normal = Normal::new(0.0, sigma).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut noisy = |_: usize| {
        ImageBuffer::from_fn(64, 64, |_, _| [0; 3].map(|_: u8| (128.0f64 + normal.sample(&mut rng)).round().clamp(0.0, 255.0) as u8))
    };
    let single = noisy(0);
    let shots: Vec<_> = (0..5).map(&mut noisy).collect();
    let avg = average_stack(&shots).unwrap();
    let ratio = channel_std(&avg) / channel_std(&single);
    let expect = 1.0 / 5f64.sqrt();
    assert!((ratio - expect).abs() < 0.1 * expect, "{ratio} vs {expect}");
}

#[test]
fn rectify_shots_aligns_translated_copies() {
    let reference = ImageBuffer::from_fn(40, 30, |x, y| [(x * 6) as u8, (y * 8) as u8, 90]);
    let shifts = [(0.0, 0.0), (2.0, 1.0), (-1.0, 3.0)];
    let mut shots = Vec::new();
    let mut corrs = Vec::new();
    for &(dx, dy) in &shifts {
        // shot = reference moved by (dx, dy); mapping shot -> reference is the inverse shift
        shots.push(warp_bilinear(&reference, &Homography::translation(dx, dy), 40, 30).unwrap());
        let pts = [[5.0, 5.0], [30.0, 4.0], [33.0, 25.0], [6.0, 22.0], [18.0, 14.0]];
        corrs.push(
            pts.iter()
                .map(|&p| Correspondence { src: [p[0] + dx, p[1] + dy], dst: p })
                .collect::<Vec<_>>(),
        );
    }
    let out = rectify_shots(&shots, &corrs, (40, 30), &RansacOptions::default()).unwrap();
    for y in 4..26 {
        for x in 4..36 {
            assert_eq!(out.get(x, y), reference.get(x, y), "({x},{y})");
        }
    }
    assert!(rectify_shots(&shots, &corrs[..2], (40, 30), &RansacOptions::default()).is_err());
}
