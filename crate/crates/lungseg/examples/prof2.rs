// Scratch: micro-timing of individual ops at training sizes.
use std::time::Instant;
use lungseg::tinynet::layers::*;
use lungseg::tinynet::Tensor4;

fn t4(n: usize, c: usize, h: usize, w: usize, seed: u64) -> Tensor4 {
    let mut s = seed;
    let data = (0..n*c*h*w).map(|_| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 11) as f64 / (1u64<<53) as f64) - 0.5
    }).collect();
    Tensor4::from_vec(n, c, h, w, data).unwrap()
}

fn bench(name: &str, reps: usize, mut f: impl FnMut()) {
    f();
    let t = Instant::now();
    for _ in 0..reps { f(); }
    println!("{name}: {:.1} ms", t.elapsed().as_secs_f64() * 1000.0 / reps as f64);
}

fn main() {
    // dec0-like conv: 16->8 at 64x64, batch 14 (biggest conv in the net).
    let x = t4(14, 16, 64, 64, 1);
    let w = t4(8, 16, 3, 3, 2);
    let g = t4(14, 8, 64, 64, 3);
    bench("conv 16->8 @64 fwd", 5, || { let _ = conv2d_forward(&x, &w); });
    bench("conv 16->8 @64 bwd", 5, || { let _ = conv2d_backward(&x, &w, &g); });

    // enc0 conv2: 8->8 at 64x64.
    let x2 = t4(14, 8, 64, 64, 4);
    let w2 = t4(8, 8, 3, 3, 5);
    bench("conv 8->8 @64 fwd", 5, || { let _ = conv2d_forward(&x2, &w2); });

    // BN at 14x8x64x64.
    let gamma = t4(1, 8, 1, 1, 6);
    let beta = t4(1, 8, 1, 1, 7);
    bench("bn train @14x8x64", 5, || { let _ = bn_forward_train(&x2, &gamma, &beta); });
    let (_, cache, _) = bn_forward_train(&x2, &gamma, &beta);
    let go = t4(14, 8, 64, 64, 8);
    bench("bn bwd", 5, || { let _ = bn_backward(&cache, &gamma, &go); });
    bench("relu fwd", 5, || { let _ = relu_forward(&x2); });
    bench("maxpool fwd", 5, || { let _ = maxpool2_forward(&x2); });
    let wd = t4(16, 8, 2, 2, 9);
    let xd = t4(14, 16, 32, 32, 10);
    bench("deconv 16->8 @32 fwd", 5, || { let _ = deconv2x2_forward(&xd, &wd); });
}
