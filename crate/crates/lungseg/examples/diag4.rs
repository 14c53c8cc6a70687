// Scratch: visualize data pairs and predictions.
use lungseg::cli::cmd_train;
use lungseg::config::PipelineConfig;
use lungseg::phantom::{generate_dataset, PhantomConfig, Profile};
use lungseg::preprocess::{find_body_box, preprocess_label_slice, preprocess_slice};
use lungseg::tinynet::{forward_eval, load_weights, logits_to_labels, NetConfig, Tensor4};
use lungseg::volgrid::io::{load_mask, load_volume};
use lungseg::volgrid::manifest::Split;

fn show(title: &str, f: impl Fn(usize, usize) -> char) {
    println!("-- {title}");
    for y in (0..64).step_by(2) {
        let row: String = (0..64).map(|x| f(y, x)).collect();
        println!("{row}");
    }
}

fn main() {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(36, &PhantomConfig::new(Profile::Healthy, 1000), Split::Train, &dir.path().join("t")).unwrap();
    let test = generate_dataset(1, &PhantomConfig::new(Profile::Healthy, 3000), Split::Test, &dir.path().join("e")).unwrap();

    let mut cfg = PipelineConfig::default();
    cfg.target_resolution = 64;
    cfg.epochs = epochs;
    cmd_train(&dir.path().join("t/manifest.csv"), &dir.path().join("h.tnet"), None, 42, &cfg).unwrap();

    let store = load_weights(&dir.path().join("h.tnet")).unwrap();
    let net = NetConfig::infer_from_store(&store).unwrap();

    let e = &test.entries[0];
    let v = load_volume(&e.image_path).unwrap();
    let m = load_mask(&e.mask_path).unwrap();
    let (bx, _) = find_body_box(&v, &cfg.body_box_params());
    let z = v.dims().z / 2;
    let img = preprocess_slice(&v, z, &bx, 64).unwrap();
    let lab = preprocess_label_slice(&m, z, &bx, 64).unwrap();

    show("image (.:air, #:body, o:lung-dark)", |y, x| {
        let v = img.at(y, x);
        if v < 0.05 { '.' } else if v < 0.35 { 'o' } else { '#' }
    });
    show("gt labels", |y, x| match lab.at(y, x) { 0 => '.', 1 => 'R', _ => 'L' });

    let mut batch = Tensor4::zeros(1, 1, 64, 64);
    for (d, &s) in batch.data.iter_mut().zip(img.values()) { *d = s as f64; }
    let logits = forward_eval(&net, &store, &batch).unwrap();
    let pred = &logits_to_labels(&logits)[0];
    show("prediction", |y, x| match pred.at(y, x) { 0 => '.', 1 => 'R', _ => 'L' });
}
