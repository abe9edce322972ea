//! Synthetic face dataset: ellipse glyphs with eyes and a mouth over
//! textured noise.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::anchors::BoxXYWH;
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::Tensor;
use crate::train::Sample;

use super::annotations::{serialize_annotations, AnnotationEntry, DatasetIndex};
use super::pnm::encode_ppm;

pub const MIN_FACE: usize = 8;
pub const MAX_FACES: usize = 5;
const PLACEMENT_TRIES: usize = 100;

fn background(rng: &mut ChaCha8Rng, size: usize) -> Tensor<f32> {
    let base: [f32; 3] = [rng.gen_range(0.1..0.6), rng.gen_range(0.1..0.6), rng.gen_range(0.1..0.6)];
    let fx: f32 = rng.gen_range(0.02..0.2);
    let fy: f32 = rng.gen_range(0.02..0.2);
    let phase: f32 = rng.gen_range(0.0..6.3);
    let amp: f32 = rng.gen_range(0.03..0.12);
    let mut img = Tensor::zeros([1, 3, size, size]);
    for y in 0..size {
        for x in 0..size {
            let wave = amp * (fx * x as f32 + fy * y as f32 + phase).sin();
            for (c, b) in base.iter().enumerate() {
                let noise: f32 = rng.gen_range(-0.08..0.08);
                img.set([0, c, y, x], (b + wave + noise).clamp(0.0, 1.0));
            }
        }
    }
    img
}

fn overlaps(a: &BoxXYWH, b: &BoxXYWH) -> bool {
    a.x < b.right() && b.x < a.right() && a.y < b.bottom() && b.y < a.bottom()
}

fn paint_face(img: &mut Tensor<f32>, b: &BoxXYWH, rng: &mut ChaCha8Rng) {
    let skin: [f32; 3] = [rng.gen_range(0.75..1.0), rng.gen_range(0.55..0.8), rng.gen_range(0.4..0.65)];
    let dark = rng.gen_range(0.0..0.15f32);
    let (cx, cy, rx, ry) = (b.cx(), b.cy(), b.w / 2.0, b.h / 2.0);
    let eye_r = (0.1 * b.w).max(1.0);
    let eyes = [(b.x + 0.32 * b.w, b.y + 0.38 * b.h), (b.x + 0.68 * b.w, b.y + 0.38 * b.h)];
    let (mcx, mcy, mr) = (cx, b.y + 0.55 * b.h, 0.25 * b.w);
    let thick = (0.06 * b.w).max(0.75);
    for y in b.y as usize..b.bottom() as usize {
        for x in b.x as usize..b.right() as usize {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let e = ((px - cx) / rx).powi(2) + ((py - cy) / ry).powi(2);
            if e > 1.0 {
                continue;
            }
            let in_eye = eyes.iter().any(|&(ex, ey)| (px - ex).hypot(py - ey) <= eye_r);
            let d = (px - mcx).hypot(py - mcy);
            let in_mouth = py > mcy + 0.3 * mr && (d - mr).abs() <= thick;
            for (c, s) in skin.iter().enumerate() {
                img.set([0, c, y, x], if in_eye || in_mouth { dark } else { *s });
            }
        }
    }
}

/// Renders one image with 1 to 5 non-overlapping faces. Face widths are
/// uniform in `[8, size / 2]` integer pixels; heights are 1 to 1.25 times
/// the width.
pub fn render_sample(size: usize, seed: u64) -> Sample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = background(&mut rng, size);
    let target = rng.gen_range(1..=MAX_FACES);
    let max_side = (size / 2).max(MIN_FACE);
    let mut boxes: Vec<BoxXYWH> = Vec::with_capacity(target);
    for _ in 0..target {
        for _ in 0..PLACEMENT_TRIES {
            let w = rng.gen_range(MIN_FACE..=max_side);
            let h = ((w as f64 * rng.gen_range(1.0..1.25)).round() as usize).min(size);
            let x = rng.gen_range(0..=size - w);
            let y = rng.gen_range(0..=size - h);
            let b = BoxXYWH { x: x as f64, y: y as f64, w: w as f64, h: h as f64 };
            if boxes.iter().all(|o| !overlaps(o, &b)) {
                boxes.push(b);
                break;
            }
        }
    }
    for b in &boxes {
        paint_face(&mut img, b, &mut rng);
    }
    Sample::new(img, boxes).expect("generated boxes are valid")
}

/// Per-image seeds derived from the dataset seed.
fn image_seeds(count: usize, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| rng.gen()).collect()
}

/// In-memory dataset, identical to what [`synth_generate`] writes (up to
/// the 8-bit quantization of the image files).
pub fn synth_samples(count: usize, size: usize, seed: u64) -> Vec<Sample> {
    let seeds = image_seeds(count, seed);
    par::map_indexed(count, |i| render_sample(size, seeds[i]))
}

/// Writes `images/NNNNNN.ppm` and `annotations.txt` under `out_dir`.
pub fn synth_generate(count: usize, size: usize, seed: u64, out_dir: &Path) -> Result<DatasetIndex> {
    if size < 2 * MIN_FACE {
        return Err(Error::Invalid(format!("resolution {size} is too small for {MIN_FACE}px faces")));
    }
    let images = out_dir.join("images");
    std::fs::create_dir_all(&images)?;
    let seeds = image_seeds(count, seed);
    let mut index = DatasetIndex::default();
    for (i, s) in seeds.into_iter().enumerate() {
        let sample = render_sample(size, s);
        let rel = format!("images/{i:06}.ppm");
        std::fs::write(out_dir.join(&rel), encode_ppm(&sample.image))?;
        index.entries.push(AnnotationEntry { path: rel, boxes: sample.boxes });
    }
    std::fs::write(out_dir.join("annotations.txt"), serialize_annotations(&index))?;
    Ok(index)
}
