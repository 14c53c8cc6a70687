// Scratch: allocation-churn hypothesis.
use std::time::Instant;

fn main() {
    let size = 14 * 8 * 64 * 64; // level-0 tensor elements
    let reps = 200;
    let t = Instant::now();
    let mut sink = 0.0f64;
    for i in 0..reps {
        let v = vec![0.0f64; size];
        sink += v[i % size];
    }
    println!("alloc+zero 3.7MB: {:.3} ms each (sink {sink})", t.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    // Alloc + full write (simulating produce-once tensors).
    let t = Instant::now();
    let mut sink2 = 0.0f64;
    for i in 0..reps {
        let mut v = vec![0.0f64; size];
        for (j, x) in v.iter_mut().enumerate() { *x = (i + j) as f64; }
        sink2 += v[i % size];
    }
    println!("alloc+zero+write 3.7MB: {:.3} ms each (sink {sink2})", t.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    // Reused buffer write.
    let mut v = vec![0.0f64; size];
    let t = Instant::now();
    let mut sink3 = 0.0f64;
    for i in 0..reps {
        for (j, x) in v.iter_mut().enumerate() { *x = (i + j) as f64; }
        sink3 += v[i % size];
    }
    println!("reused write 3.7MB: {:.3} ms each (sink {sink3})", t.elapsed().as_secs_f64() * 1000.0 / reps as f64);
}
