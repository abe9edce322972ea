//! Trains on synthetic faces and reports held-out AP.
//!
//! cargo run --release --example desk_train -- [iters] [lr] [batch] [width]

use std::time::Instant;

use extd::detect::{average_precision, detect_all, DetectConfig};
use extd::io::synth_samples;
use extd::model::{ModelConfig, Variant};
use extd::train::{train_loop, Schedule, TrainConfig};

fn main() -> extd::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: &str| args.get(i).cloned().unwrap_or_else(|| d.to_string());
    let iters: usize = arg(1, "2000").parse().unwrap();
    let lr: f64 = arg(2, "0.01").parse().unwrap();
    let batch: usize = arg(3, "8").parse().unwrap();
    let width: usize = arg(4, "16").parse().unwrap();
    let res = 128;

    let mut model = ModelConfig::preset(Variant::Fpn, width);
    model.bn_per_pass = true;
    let train = synth_samples(500, res, 1);
    let test = synth_samples(100, res, 2);
    let tc = TrainConfig::new(Schedule::scaled(iters, lr, batch), res, 0);
    let t = Instant::now();
    let (params, _) = train_loop(&model, &tc, &train, None, |l| {
        if l.iter % 100 == 0 || l.iter == 1 {
            println!("{} ({:.0}s)", l.format(), t.elapsed().as_secs_f64());
        }
    })?;
    let images: Vec<_> = test.iter().map(|s| s.image.clone()).collect();
    let dets = detect_all(&params, &model, &images, &DetectConfig::default())?;
    let gts: Vec<_> = test.iter().map(|s| s.boxes.clone()).collect();
    let r = average_precision(&dets, &gts, 0.5);
    println!("AP {:.4} tp {} fp {} fn {} ({:.0}s)", r.ap, r.tp, r.fp, r.fn_, t.elapsed().as_secs_f64());
    Ok(())
}
