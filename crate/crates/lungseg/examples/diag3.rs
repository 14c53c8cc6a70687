// Scratch: train-mode vs eval-mode DSC on identical clean slices.
use lungseg::cli::cmd_train;
use lungseg::config::PipelineConfig;
use lungseg::phantom::{generate_dataset, PhantomConfig, Profile};
use lungseg::preprocess::{find_body_box, preprocess_label_slice, preprocess_slice};
use lungseg::tinynet::{forward_eval, forward_train, load_weights, logits_to_labels, NetConfig, Tensor4};
use lungseg::volgrid::io::{load_mask, load_volume};
use lungseg::volgrid::manifest::Split;

fn main() {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(4);
    let dir = tempfile::tempdir().unwrap();
    let train_h = PhantomConfig::new(Profile::Healthy, 1000);
    generate_dataset(36, &train_h, Split::Train, &dir.path().join("t")).unwrap();
    let test_cfg = PhantomConfig::new(Profile::Healthy, 3000);
    let test = generate_dataset(3, &test_cfg, Split::Test, &dir.path().join("e")).unwrap();

    let mut cfg = PipelineConfig::default();
    cfg.target_resolution = 64;
    cfg.epochs = epochs;
    let out = cmd_train(&dir.path().join("t/manifest.csv"), &dir.path().join("h.tnet"), None, 42, &cfg).unwrap();
    println!("last-10 loss {:.4}", out.losses[out.losses.len()-10..].iter().sum::<f64>()/10.0);

    let mut store = load_weights(&dir.path().join("h.tnet")).unwrap();
    let net = NetConfig::infer_from_store(&store).unwrap();

    // Build a 14-slice clean batch of central lung slices from test cases.
    let mut imgs = Vec::new();
    let mut labs = Vec::new();
    'outer: for e in &test.entries {
        let v = load_volume(&e.image_path).unwrap();
        let m = load_mask(&e.mask_path).unwrap();
        let (bx, _) = find_body_box(&v, &cfg.body_box_params());
        for dz in 0..5 {
            let z = v.dims().z / 2 - 2 + dz;
            imgs.push(preprocess_slice(&v, z, &bx, 64).unwrap());
            labs.push(preprocess_label_slice(&m, z, &bx, 64).unwrap());
            if imgs.len() == 14 { break 'outer; }
        }
    }
    let n = imgs.len();
    let mut batch = Tensor4::zeros(n, 1, 64, 64);
    for (i, img) in imgs.iter().enumerate() {
        for (d, &s) in batch.data[i*4096..(i+1)*4096].iter_mut().zip(img.values()) { *d = s as f64; }
    }
    let dsc_of = |planes: &[lungseg::volgrid::LabelPlane]| {
        let mut inter = [0usize; 3]; let mut psum = [0usize; 3]; let mut gsum = [0usize; 3];
        for (p, g) in planes.iter().zip(&labs) {
            for (a, b) in p.values.iter().zip(&g.values) {
                psum[*a as usize] += 1; gsum[*b as usize] += 1;
                if a == b { inter[*a as usize] += 1; }
            }
        }
        let d = |c: usize| 2.0 * inter[c] as f64 / (psum[c] + gsum[c]) as f64;
        (d(1), d(2))
    };
    let eval_logits = forward_eval(&net, &store, &batch).unwrap();
    let (d1, d2) = dsc_of(&logits_to_labels(&eval_logits));
    println!("eval-mode  slice DSC right {d1:.3} left {d2:.3}");
    let (train_logits, _) = forward_train(&net, &mut store, &batch).unwrap();
    let (d1, d2) = dsc_of(&logits_to_labels(&train_logits));
    println!("train-mode slice DSC right {d1:.3} left {d2:.3}");
}
