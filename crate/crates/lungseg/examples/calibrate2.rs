// Scratch: full diversity + architecture experiment calibration.
use std::time::Instant;
use lungseg::cli::{cmd_train, infer_volume};
use lungseg::config::PipelineConfig;
use lungseg::metrics::{evaluate_case, paired_t_test, tumor_overlap, EvalMode, LabelSel, Region3};
use lungseg::phantom::{generate_dataset, tumor_mask_path, PhantomConfig, Profile};
use lungseg::tinynet::{load_weights, NetConfig};
use lungseg::volgrid::io::{load_mask, load_volume};
use lungseg::volgrid::manifest::{DatasetManifest, Split};

fn eval_model(weights: &std::path::Path, manifest: &DatasetManifest, cfg: &PipelineConfig) -> (Vec<f64>, Vec<f64>) {
    let store = load_weights(weights).unwrap();
    let net = NetConfig::infer_from_store(&store).unwrap();
    let mut dscs = Vec::new();
    let mut overlaps = Vec::new();
    for e in &manifest.entries {
        let v = load_volume(&e.image_path).unwrap();
        let gt = load_mask(&e.mask_path).unwrap();
        let pred = infer_volume(&net, &store, &v, false, cfg).unwrap();
        let ev = evaluate_case(&e.case_id, &pred, &gt, EvalMode::PerLung).unwrap();
        dscs.push(ev.summary.dsc);
        let tpath = tumor_mask_path(&e.mask_path);
        if tpath.exists() {
            let t = load_mask(&tpath).unwrap();
            overlaps.push(tumor_overlap(
                &Region3::from_labels(&pred, LabelSel::Lungs),
                &Region3::from_labels(&t, LabelSel::Lungs),
            ).unwrap());
        }
    }
    (dscs, overlaps)
}

fn main() {
    let epochs: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(8);
    let dir = tempfile::tempdir().unwrap();
    let t0 = Instant::now();
    generate_dataset(36, &PhantomConfig::new(Profile::Healthy, 1000), Split::Train, &dir.path().join("train_h")).unwrap();
    generate_dataset(36, &PhantomConfig { tumor_prob: 1.0, effusion_prob: 1.0, consolidation_prob: 0.5, ..PhantomConfig::new(Profile::Diverse, 2000) }, Split::Train, &dir.path().join("train_d")).unwrap();
    let test_lesion = generate_dataset(
        20,
        &PhantomConfig { tumor_prob: 1.0, effusion_prob: 1.0, consolidation_prob: 0.5, ..PhantomConfig::new(Profile::Diverse, 4000) },
        Split::Test,
        &dir.path().join("test_lesion"),
    ).unwrap();
    println!("datasets in {:.1}s", t0.elapsed().as_secs_f64());

    let mut cfg = PipelineConfig::default();
    cfg.target_resolution = 64;
    cfg.epochs = epochs;

    for (name, manifest, residual) in [("A(healthy)", "train_h", false), ("B(diverse)", "train_d", false), ("BR(resunet)", "train_d", true)] {
        let t = Instant::now();
        let mut c = cfg.clone();
        c.residual = residual;
        let out = cmd_train(&dir.path().join(manifest).join("manifest.csv"), &dir.path().join(format!("{name}.tnet")), None, 42, &c).unwrap();
        println!("{name}: trained in {:.0}s, last-10 loss {:.4}", t.elapsed().as_secs_f64(),
            out.losses[out.losses.len()-10..].iter().sum::<f64>()/10.0);
    }

    let (a_dsc, a_ov) = eval_model(&dir.path().join("A(healthy).tnet"), &test_lesion, &cfg);
    let (b_dsc, b_ov) = eval_model(&dir.path().join("B(diverse).tnet"), &test_lesion, &cfg);
    let (r_dsc, _) = eval_model(&dir.path().join("BR(resunet).tnet"), &test_lesion, &cfg);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    println!("A mean DSC {:.4}  B mean DSC {:.4}  BR mean DSC {:.4}", mean(&a_dsc), mean(&b_dsc), mean(&r_dsc));
    println!("B - A = {:.4} (need >= 0.02)", mean(&b_dsc) - mean(&a_dsc));
    println!("|BR - B| = {:.4} (need <= 0.02)", (mean(&r_dsc) - mean(&b_dsc)).abs());
    let tt = paired_t_test(&b_dsc, &a_dsc).unwrap();
    println!("paired t = {:.3}, p = {:.6} (need < 0.05)", tt.t, tt.p_two_sided);
    println!("tumor overlap A {:.3} B {:.3} (need B > A)", mean(&a_ov), mean(&b_ov));
}
