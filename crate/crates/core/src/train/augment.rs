//! Training-time augmentation: photometric distortion, square crop resized
//! to the training resolution, and flips.

use rand::Rng;

use crate::anchors::BoxXYWH;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An RGB image in `[0, 1]` (shape `[1, 3, H, W]`) with its face boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Tensor<f32>,
    pub boxes: Vec<BoxXYWH>,
}

impl Sample {
    pub fn new(image: Tensor<f32>, boxes: Vec<BoxXYWH>) -> Result<Self> {
        let [n, c, _, _] = image.shape();
        if n != 1 || c != 3 {
            return Err(Error::shape(format!("sample image must be [1, 3, H, W], got {:?}", image.shape())));
        }
        for b in &boxes {
            b.validate()?;
        }
        Ok(Sample { image, boxes })
    }

    pub fn height(&self) -> usize {
        self.image.height()
    }

    pub fn width(&self) -> usize {
        self.image.width()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    /// Output side length.
    pub size: usize,
    pub photometric_prob: f64,
    /// Additive brightness range, in `[0, 1]` units.
    pub brightness: f64,
    pub contrast: (f64, f64),
    pub saturation: (f64, f64),
    /// Hue shift range in degrees.
    pub hue: f64,
    /// Crop side as a fraction of the short image side.
    pub crop_scale: (f64, f64),
    pub crop_tries: usize,
    pub hflip_prob: f64,
    pub vflip_prob: f64,
}

impl AugmentConfig {
    pub fn new(size: usize) -> Self {
        AugmentConfig {
            size,
            photometric_prob: 0.5,
            brightness: 32.0 / 255.0,
            contrast: (0.5, 1.5),
            saturation: (0.5, 1.5),
            hue: 18.0,
            crop_scale: (0.3, 1.0),
            crop_tries: 50,
            hflip_prob: 0.5,
            vflip_prob: 0.5,
        }
    }

    pub fn without_vflip(mut self) -> Self {
        self.vflip_prob = 0.0;
        self
    }

    /// Only resizes to `size`.
    pub fn identity(size: usize) -> Self {
        AugmentConfig {
            photometric_prob: 0.0,
            crop_scale: (1.0, 1.0),
            hflip_prob: 0.0,
            vflip_prob: 0.0,
            ..Self::new(size)
        }
    }
}

pub fn augment(sample: &Sample, cfg: &AugmentConfig, rng: &mut impl Rng) -> Sample {
    let mut image = sample.image.clone();
    photometric(&mut image, cfg, rng);
    let (mut image, mut boxes) = random_crop(&image, &sample.boxes, cfg, rng);
    if rng.gen_bool(cfg.hflip_prob.clamp(0.0, 1.0)) {
        (image, boxes) = hflip(&image, &boxes);
    }
    if rng.gen_bool(cfg.vflip_prob.clamp(0.0, 1.0)) {
        (image, boxes) = vflip(&image, &boxes);
    }
    Sample { image, boxes }
}

fn photometric(image: &mut Tensor<f32>, cfg: &AugmentConfig, rng: &mut impl Rng) {
    let p = cfg.photometric_prob.clamp(0.0, 1.0);
    let brightness = rng.gen_bool(p).then(|| rng.gen_range(-cfg.brightness..=cfg.brightness));
    let contrast = rng.gen_bool(p).then(|| rng.gen_range(cfg.contrast.0..=cfg.contrast.1));
    let saturation = rng.gen_bool(p).then(|| rng.gen_range(cfg.saturation.0..=cfg.saturation.1));
    let hue = rng.gen_bool(p).then(|| rng.gen_range(-cfg.hue..=cfg.hue));
    if brightness.is_none() && contrast.is_none() && saturation.is_none() && hue.is_none() {
        return;
    }
    let hw = image.height() * image.width();
    let data = image.data_mut();
    for i in 0..hw {
        let mut rgb = [data[i] as f64, data[hw + i] as f64, data[2 * hw + i] as f64];
        if let Some(d) = brightness {
            rgb.iter_mut().for_each(|v| *v += d);
        }
        if let Some(a) = contrast {
            rgb.iter_mut().for_each(|v| *v *= a);
        }
        if saturation.is_some() || hue.is_some() {
            let clamped = rgb.map(|v| v.clamp(0.0, 1.0));
            let (mut h, mut s, v) = rgb_to_hsv(clamped);
            if let Some(f) = saturation {
                s = (s * f).clamp(0.0, 1.0);
            }
            if let Some(dh) = hue {
                h = (h + dh).rem_euclid(360.0);
            }
            rgb = hsv_to_rgb(h, s, v);
        }
        for (k, v) in rgb.iter().enumerate() {
            data[k * hw + i] = v.clamp(0.0, 1.0) as f32;
        }
    }
}

pub fn rgb_to_hsv([r, g, b]: [f64; 3]) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Bilinear resample of the region `[x0, x0 + cw) x [y0, y0 + ch)` to
/// `out_h x out_w` (half-pixel centers, edge clamped).
pub fn resample(image: &Tensor<f32>, x0: f64, y0: f64, cw: f64, ch: f64, out_h: usize, out_w: usize) -> Tensor<f32> {
    let [_, c, h, w] = image.shape();
    let sy = ch / out_h as f64;
    let sx = cw / out_w as f64;
    let taps = |o: usize, scale: f64, start: f64, len: usize| {
        let src = (start + (o as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = src.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, (src - i0 as f64) as f32)
    };
    let ys: Vec<_> = (0..out_h).map(|o| taps(o, sy, y0, h)).collect();
    let xs: Vec<_> = (0..out_w).map(|o| taps(o, sx, x0, w)).collect();
    let mut out = Tensor::zeros([1, c, out_h, out_w]);
    for k in 0..c {
        let src = image.plane(0, k);
        let base = k * out_h * out_w;
        let dst = out.data_mut();
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                dst[base + oy * out_w + ox] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

/// Maps boxes from a crop window to the resized output, dropping those
/// whose center falls outside the window.
fn crop_boxes(boxes: &[BoxXYWH], x0: f64, y0: f64, cw: f64, ch: f64, out_h: usize, out_w: usize) -> Vec<BoxXYWH> {
    let sx = out_w as f64 / cw;
    let sy = out_h as f64 / ch;
    boxes
        .iter()
        .filter(|b| b.cx() >= x0 && b.cx() < x0 + cw && b.cy() >= y0 && b.cy() < y0 + ch)
        .filter_map(|b| {
            let shifted = BoxXYWH { x: (b.x - x0) * sx, y: (b.y - y0) * sy, w: b.w * sx, h: b.h * sy };
            shifted.clip(out_w as f64, out_h as f64)
        })
        .collect()
}

fn random_crop(image: &Tensor<f32>, boxes: &[BoxXYWH], cfg: &AugmentConfig, rng: &mut impl Rng) -> (Tensor<f32>, Vec<BoxXYWH>) {
    let (h, w) = (image.height(), image.width());
    let short = h.min(w) as f64;
    let (lo, hi) = cfg.crop_scale;
    for _ in 0..cfg.crop_tries.max(1) {
        let frac = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
        let side = (frac * short).round().clamp(1.0, short) as usize;
        let x0 = rng.gen_range(0..=w - side);
        let y0 = rng.gen_range(0..=h - side);
        let (x0, y0, s) = (x0 as f64, y0 as f64, side as f64);
        let kept = crop_boxes(boxes, x0, y0, s, s, cfg.size, cfg.size);
        if !kept.is_empty() || boxes.is_empty() {
            return (resample(image, x0, y0, s, s, cfg.size, cfg.size), kept);
        }
    }
    let (fw, fh) = (w as f64, h as f64);
    (resample(image, 0.0, 0.0, fw, fh, cfg.size, cfg.size), crop_boxes(boxes, 0.0, 0.0, fw, fh, cfg.size, cfg.size))
}

pub fn hflip(image: &Tensor<f32>, boxes: &[BoxXYWH]) -> (Tensor<f32>, Vec<BoxXYWH>) {
    let w = image.width();
    let out = Tensor::from_fn(image.shape(), |[n, c, y, x]| image.at([n, c, y, w - 1 - x]));
    let fw = w as f64;
    (out, boxes.iter().map(|b| BoxXYWH { x: fw - b.right(), ..*b }).collect())
}

pub fn vflip(image: &Tensor<f32>, boxes: &[BoxXYWH]) -> (Tensor<f32>, Vec<BoxXYWH>) {
    let h = image.height();
    let out = Tensor::from_fn(image.shape(), |[n, c, y, x]| image.at([n, c, h - 1 - y, x]));
    let fh = h as f64;
    (out, boxes.iter().map(|b| BoxXYWH { y: fh - b.bottom(), ..*b }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(h: usize, w: usize) -> Sample {
        let img = Tensor::from_fn([1, 3, h, w], |[_, c, y, x]| ((c * 7 + y * 3 + x) % 11) as f32 / 10.0);
        Sample::new(img, vec![BoxXYWH::new(2.0, 3.0, 5.0, 4.0).unwrap()]).unwrap()
    }

    #[test]
    fn double_flip_is_identity() {
        let s = sample(8, 10);
        let (i1, b1) = hflip(&s.image, &s.boxes);
        let (i2, b2) = hflip(&i1, &b1);
        assert_eq!(i2, s.image);
        assert_eq!(b2, s.boxes);
        assert_eq!(b1[0].x, 10.0 - 7.0);
        let (i3, b3) = vflip(&s.image, &s.boxes);
        assert_eq!(vflip(&i3, &b3), (s.image.clone(), s.boxes.clone()));
    }

    #[test]
    fn identity_config() {
        let s = sample(16, 16);
        let out = augment(&s, &AugmentConfig::identity(16), &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(out, s);
    }

    #[test]
    fn hsv_round_trip() {
        for rgb in [[0.2, 0.5, 0.9], [1.0, 0.0, 0.0], [0.3, 0.3, 0.3], [0.9, 0.8, 0.1]] {
            let (h, s, v) = rgb_to_hsv(rgb);
            let back = hsv_to_rgb(h, s, v);
            for k in 0..3 {
                assert!((back[k] - rgb[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn boxes_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let img = Tensor::full([1, 3, 40, 60], 0.5);
        let boxes = vec![
            BoxXYWH::new(0.0, 0.0, 20.0, 20.0).unwrap(),
            BoxXYWH::new(30.0, 10.0, 25.0, 28.0).unwrap(),
            BoxXYWH::new(50.0, 30.0, 10.0, 10.0).unwrap(),
        ];
        let s = Sample::new(img, boxes).unwrap();
        let cfg = AugmentConfig::new(32);
        for _ in 0..200 {
            let out = augment(&s, &cfg, &mut rng);
            assert_eq!(out.image.shape(), [1, 3, 32, 32]);
            assert!(!out.boxes.is_empty());
            for b in &out.boxes {
                assert!(b.w > 0.0 && b.h > 0.0 && b.x >= 0.0 && b.y >= 0.0);
                assert!(b.right() <= 32.0 + 1e-9 && b.bottom() <= 32.0 + 1e-9);
            }
            assert!(out.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn centered_box_survives_covering_crop() {
        let b = BoxXYWH::centered(20.0, 20.0, 4.0, 4.0).unwrap();
        let kept = crop_boxes(&[b], 10.0, 12.0, 16.0, 16.0, 32, 32);
        assert_eq!(kept.len(), 1);
        assert_eq!(crop_boxes(&[b], 21.0, 0.0, 16.0, 16.0, 32, 32).len(), 0);
    }
}
