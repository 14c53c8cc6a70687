// Scratch: compare train-mode and eval-mode forward outputs after training.
use lungseg::cli::cmd_train;
use lungseg::config::PipelineConfig;
use lungseg::phantom::{generate_dataset, PhantomConfig, Profile};
use lungseg::preprocess::{find_body_box, preprocess_label_slice, preprocess_slice};
use lungseg::tinynet::{forward_eval, forward_train, load_weights, NetConfig, Tensor4};
use lungseg::volgrid::io::{load_mask, load_volume};
use lungseg::volgrid::manifest::Split;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let train_h = PhantomConfig::new(Profile::Healthy, 1000);
    let train = generate_dataset(8, &train_h, Split::Train, &dir.path().join("train_h")).unwrap();

    let mut cfg = PipelineConfig::default();
    cfg.target_resolution = 64;
    cfg.epochs = 2;
    cmd_train(&dir.path().join("train_h/manifest.csv"), &dir.path().join("h.tnet"), None, 42, &cfg).unwrap();

    let mut store = load_weights(&dir.path().join("h.tnet")).unwrap();
    let net = NetConfig::infer_from_store(&store).unwrap();

    // A clean (un-augmented) training slice with lung.
    let e = &train.entries[0];
    let v = load_volume(&e.image_path).unwrap();
    let m = load_mask(&e.mask_path).unwrap();
    let (bx, _) = find_body_box(&v, &cfg.body_box_params());
    let z = v.dims().z / 2;
    let img = preprocess_slice(&v, z, &bx, 64).unwrap();
    let lab = preprocess_label_slice(&m, z, &bx, 64).unwrap();

    let mut batch = Tensor4::zeros(1, 1, 64, 64);
    for (d, &s) in batch.data.iter_mut().zip(img.values()) { *d = s as f64; }

    let eval_logits = forward_eval(&net, &store, &batch).unwrap();
    let (train_logits, _) = forward_train(&net, &mut store, &batch).unwrap();

    // Mean logits per class at lung vs background pixels, both modes.
    let report = |name: &str, logits: &Tensor4| {
        let mut lung_sum = [0.0f64; 3]; let mut lung_n = 0usize;
        let mut bg_sum = [0.0f64; 3]; let mut bg_n = 0usize;
        for p in 0..64 * 64 {
            let is_lung = lab.values[p] != 0;
            for c in 0..3 {
                let v = logits.data[c * 64 * 64 + p];
                if is_lung { lung_sum[c] += v; } else { bg_sum[c] += v; }
            }
            if is_lung { lung_n += 1; } else { bg_n += 1; }
        }
        println!("{name}: lung px mean logits = [{:.2} {:.2} {:.2}] over {} px",
            lung_sum[0]/lung_n as f64, lung_sum[1]/lung_n as f64, lung_sum[2]/lung_n as f64, lung_n);
        println!("{name}: bg   px mean logits = [{:.2} {:.2} {:.2}] over {} px",
            bg_sum[0]/bg_n as f64, bg_sum[1]/bg_n as f64, bg_sum[2]/bg_n as f64, bg_n);
    };
    report("eval ", &eval_logits);
    report("train(batch=1!)", &train_logits);

    // Compare a bn running stat vs what one train pass computes.
    for name in ["enc0.bn1.running_mean", "enc0.bn1.running_var", "bott.bn1.running_var"] {
        let t = store.get(name).unwrap();
        println!("{name}: {:?}", &t.data[..t.data.len().min(4)]);
    }
}
