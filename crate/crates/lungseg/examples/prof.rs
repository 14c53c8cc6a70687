// Scratch: time forward/backward/loss/sgd on one training-step workload.
use std::time::Instant;
use lungseg::tinynet::*;

fn main() {
    let cfg = NetConfig::default(); // depth 3, base 8
    let mut store = init_params(&cfg, 1);
    let n = 14;
    let data: Vec<f64> = (0..n * 64 * 64).map(|i| ((i * 37 % 101) as f64) / 101.0).collect();
    let batch = Tensor4::from_vec(n, 1, 64, 64, data).unwrap();
    let labels = LabelBatch::new(n, 64, 64, (0..n * 64 * 64).map(|i| (i % 3) as u8).collect());

    // Warm up.
    let (logits, cache) = forward_train(&cfg, &mut store, &batch).unwrap();
    let (_, grad) = loss_softmax_ce(&logits, &labels).unwrap();
    let _ = backward(&cfg, &store, &cache, &grad).unwrap();

    let reps = 3;
    let t = Instant::now();
    for _ in 0..reps { let _ = forward_train(&cfg, &mut store, &batch).unwrap(); }
    println!("forward_train: {:.3} s", t.elapsed().as_secs_f64() / reps as f64);

    let (logits, cache) = forward_train(&cfg, &mut store, &batch).unwrap();
    let (_, grad) = loss_softmax_ce(&logits, &labels).unwrap();
    let t = Instant::now();
    for _ in 0..reps { let _ = backward(&cfg, &store, &cache, &grad).unwrap(); }
    println!("backward:      {:.3} s", t.elapsed().as_secs_f64() / reps as f64);

    let t = Instant::now();
    for _ in 0..reps { let _ = loss_softmax_ce(&logits, &labels).unwrap(); }
    println!("loss:          {:.3} s", t.elapsed().as_secs_f64() / reps as f64);

    let t = Instant::now();
    for _ in 0..reps { let _ = forward_eval(&cfg, &store, &batch).unwrap(); }
    println!("forward_eval:  {:.3} s", t.elapsed().as_secs_f64() / reps as f64);
}
