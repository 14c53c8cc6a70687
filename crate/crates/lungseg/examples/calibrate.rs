// Scratch: calibrate epochs / runtime for the phantom experiments.
use std::time::Instant;
use lungseg::cli::{cmd_train, infer_volume};
use lungseg::config::PipelineConfig;
use lungseg::metrics::{evaluate_case, EvalMode};
use lungseg::phantom::{generate_dataset, PhantomConfig, Profile};
use lungseg::tinynet::{load_weights, NetConfig};
use lungseg::volgrid::io::{load_mask, load_volume};
use lungseg::volgrid::manifest::Split;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let t0 = Instant::now();
    let train_h = PhantomConfig::new(Profile::Healthy, 1000);
    generate_dataset(36, &train_h, Split::Train, &dir.path().join("train_h")).unwrap();
    let test_h = PhantomConfig::new(Profile::Healthy, 3000);
    let test_manifest = generate_dataset(20, &test_h, Split::Test, &dir.path().join("test_h")).unwrap();
    println!("datasets generated in {:.1}s", t0.elapsed().as_secs_f64());

    let mut cfg = PipelineConfig::default();
    cfg.target_resolution = 64;
    cfg.epochs = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2);
    let t1 = Instant::now();
    let outcome = cmd_train(
        &dir.path().join("train_h/manifest.csv"),
        &dir.path().join("h.tnet"),
        None,
        42,
        &cfg,
    ).unwrap();
    let steps = outcome.losses.len();
    println!("trained {} steps in {:.1}s ({:.2} s/step)", steps, t1.elapsed().as_secs_f64(), t1.elapsed().as_secs_f64() / steps as f64);
    let k = outcome.losses.len();
    println!("loss[0..5]   = {:?}", &outcome.losses[..5.min(k)]);
    if k >= 20 {
        println!("loss mean steps 1-10  = {:.4}", outcome.losses[..10].iter().sum::<f64>() / 10.0);
        println!("loss mean last 10     = {:.4}", outcome.losses[k-10..].iter().sum::<f64>() / 10.0);
    }

    let store = load_weights(&dir.path().join("h.tnet")).unwrap();
    let net = NetConfig::infer_from_store(&store).unwrap();
    let t2 = Instant::now();
    let mut dscs = Vec::new();
    for e in &test_manifest.entries {
        let v = load_volume(&e.image_path).unwrap();
        let gt = load_mask(&e.mask_path).unwrap();
        let pred = infer_volume(&net, &store, &v, false, &cfg).unwrap();
        let ev = evaluate_case(&e.case_id, &pred, &gt, EvalMode::PerLung).unwrap();
        dscs.push(ev.summary.dsc);
    }
    let mean = dscs.iter().sum::<f64>() / dscs.len() as f64;
    println!("inference+eval of 20 cases in {:.1}s", t2.elapsed().as_secs_f64());
    println!("per-lung DSC mean {:.4} min {:.4}", mean, dscs.iter().cloned().fold(f64::INFINITY, f64::min));
}
