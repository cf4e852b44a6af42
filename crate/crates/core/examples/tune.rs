// temporary tuning harness; not part of the deliverable surface
use asmlp_core::shift::{Padding, ShiftConfig};
use asmlp_core::train::{train, TrainConfig};

fn main() {
    let a: Vec<String> = std::env::args().collect();
    let s: usize = a.get(1).map(|v| v.parse().unwrap()).unwrap_or(5);
    let seed: u64 = a.get(2).map(|v| v.parse().unwrap()).unwrap_or(7);
    let lr: f64 = a.get(3).map(|v| v.parse().unwrap()).unwrap_or(3e-3);
    let epochs: usize = a.get(4).map(|v| v.parse().unwrap()).unwrap_or(30);
    let noise: f64 = a.get(5).map(|v| v.parse().unwrap()).unwrap_or(0.3);
    let dp: f64 = a.get(6).map(|v| v.parse().unwrap()).unwrap_or(0.1);
    let warmup: usize = a.get(7).map(|v| v.parse().unwrap()).unwrap_or(3);
    let batch: usize = a.get(8).map(|v| v.parse().unwrap()).unwrap_or(32);
    let sep: usize = a.get(9).map(|v| v.parse().unwrap()).unwrap_or(8);
    let mut cfg = TrainConfig::toy(seed);
    cfg.base_lr = lr;
    cfg.epochs = epochs;
    cfg.warmup_epochs = warmup;
    cfg.dataset.noise = noise;
    cfg.variant.drop_path_max = dp;
    cfg.batch_size = batch;
    cfg.dataset.separation = sep;
    cfg.variant.shift = ShiftConfig::new(s, s, 1, Padding::Zero).unwrap();
    let t0 = std::time::Instant::now();
    match train::<f32>(&cfg) {
        Ok(out) => {
            let accs: Vec<String> = out.metrics.iter().step_by(5).map(|r| format!("{:.2}", r.train_acc)).collect();
            println!(
                "s={} seed={} lr={} noise={} dp={} wu={} b={} sep={} -> final {:.4} (path {})  {:.0}s",
                s, seed, lr, noise, dp, warmup, batch, sep,
                out.metrics.last().unwrap().train_acc,
                accs.join(" "),
                t0.elapsed().as_secs_f64()
            );
        }
        Err(e) => println!("s={s} lr={lr}: ERROR {e}"),
    }
}
