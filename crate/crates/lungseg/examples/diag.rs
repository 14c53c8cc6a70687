// Scratch: diagnose eval-mode predictions after short training.
use lungseg::cli::{cmd_train, infer_volume};
use lungseg::config::PipelineConfig;
use lungseg::phantom::{generate_dataset, PhantomConfig, Profile};
use lungseg::preprocess::{find_body_box, preprocess_slice};
use lungseg::tinynet::{forward_eval, load_weights, logits_to_labels, NetConfig, Tensor4};
use lungseg::volgrid::io::{load_mask, load_volume};
use lungseg::volgrid::manifest::Split;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let train_h = PhantomConfig::new(Profile::Healthy, 1000);
    generate_dataset(8, &train_h, Split::Train, &dir.path().join("train_h")).unwrap();
    let test_cfg = PhantomConfig::new(Profile::Healthy, 3000);
    let test = generate_dataset(2, &test_cfg, Split::Test, &dir.path().join("test_h")).unwrap();

    let mut cfg = PipelineConfig::default();
    cfg.target_resolution = 64;
    cfg.epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let outcome = cmd_train(&dir.path().join("train_h/manifest.csv"), &dir.path().join("h.tnet"), None, 42, &cfg).unwrap();
    println!("final loss {:.4}", outcome.losses.last().unwrap());

    let store = load_weights(&dir.path().join("h.tnet")).unwrap();
    let net = NetConfig::infer_from_store(&store).unwrap();
    let e = &test.entries[0];
    let v = load_volume(&e.image_path).unwrap();
    let gt = load_mask(&e.mask_path).unwrap();

    // Per-slice eval-mode prediction at center slice.
    let (bx, _) = find_body_box(&v, &cfg.body_box_params());
    let z = v.dims().z / 2;
    let img = preprocess_slice(&v, z, &bx, 64).unwrap();
    let mut batch = Tensor4::zeros(1, 1, 64, 64);
    for (d, &s) in batch.data.iter_mut().zip(img.values()) { *d = s as f64; }
    let logits = forward_eval(&net, &store, &batch).unwrap();
    let plane = &logits_to_labels(&logits)[0];
    let mut counts = [0usize; 3];
    for &l in &plane.values { counts[l as usize] += 1; }
    println!("center-slice pred counts bg/r/l = {:?}", counts);

    let pred = infer_volume(&net, &store, &v, false, &cfg).unwrap();
    let mut pc = [0usize; 3];
    for &l in pred.labels() { pc[l as usize] += 1; }
    let mut gc = [0usize; 3];
    for &l in gt.labels() { gc[l as usize] += 1; }
    println!("volume pred counts = {:?}", pc);
    println!("volume gt   counts = {:?}", gc);
}
