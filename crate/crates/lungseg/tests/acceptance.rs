//! Acceptance suite: one test per criterion, each printing a PASS line
//! (visible with `cargo test --test acceptance -- --nocapture`).
//!
//! The training-based criteria share three models trained once: a U-net on
//! 36 healthy phantoms (A), a U-net on 36 diverse phantoms (B), and a
//! ResU-net on the same diverse set, all under identical seeds and
//! hyperparameters.

mod common;

use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use common::*;
use lungseg::cli::{cmd_eval, cmd_train, cmd_ttest, infer_volume, EvalOutcome, MetricKind};
use lungseg::config::PipelineConfig;
use lungseg::metrics::{dice, hd95, msd, paired_t_test, EvalMode, Region3, TTestResult};
use lungseg::phantom::{generate, generate_dataset, PhantomConfig, Profile};
use lungseg::postprocess::remove_dense_areas;
use lungseg::tinynet::{
    backward, forward_train, init_params, load_weights, loss_softmax_ce, LabelBatch, NetConfig,
    TensorStore,
};
use lungseg::volgrid::io::{load_volume, save_mask};
use lungseg::volgrid::manifest::{load_manifest, Split};
use lungseg::volgrid::{Dims3, Spacing3};

const EXPERIMENT_SEED: u64 = 42;

struct Experiments {
    _dir: tempfile::TempDir,
    healthy: EvalOutcome,
    lesion_a: EvalOutcome,
    lesion_b: EvalOutcome,
    lesion_r: EvalOutcome,
    ttest_b_vs_a: TTestResult,
    healthy_losses: Vec<f64>,
}

fn desk_cfg() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.target_resolution = 64;
    cfg.epochs = 8;
    cfg
}

fn predict_dataset(weights: &Path, manifest_path: &Path, pred_dir: &Path, cfg: &PipelineConfig) {
    let store = load_weights(weights).unwrap();
    let net = NetConfig::infer_from_store(&store).unwrap();
    let manifest = load_manifest(manifest_path).unwrap();
    std::fs::create_dir_all(pred_dir).unwrap();
    for e in &manifest.entries {
        let volume = load_volume(&e.image_path).unwrap();
        let mask = infer_volume(&net, &store, &volume, false, cfg).unwrap();
        save_mask(&mask, &pred_dir.join(format!("{}.rvol", e.case_id))).unwrap();
    }
}

fn experiments() -> &'static Experiments {
    static CELL: OnceLock<Experiments> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let cfg = desk_cfg();

        generate_dataset(
            36,
            &PhantomConfig::new(Profile::Healthy, 1000),
            Split::Train,
            &root.join("train_healthy"),
        )
        .unwrap();
        generate_dataset(
            36,
            &PhantomConfig {
                tumor_prob: 1.0,
                effusion_prob: 1.0,
                consolidation_prob: 0.5,
                ..PhantomConfig::new(Profile::Diverse, 2000)
            },
            Split::Train,
            &root.join("train_diverse"),
        )
        .unwrap();
        generate_dataset(
            20,
            &PhantomConfig::new(Profile::Healthy, 3000),
            Split::Test,
            &root.join("test_healthy"),
        )
        .unwrap();
        generate_dataset(
            20,
            &PhantomConfig {
                tumor_prob: 1.0,
                effusion_prob: 1.0,
                consolidation_prob: 0.5,
                ..PhantomConfig::new(Profile::Diverse, 4000)
            },
            Split::Test,
            &root.join("test_lesion"),
        )
        .unwrap();

        let train = |manifest: &str, out: &str, residual: bool| -> (PathBuf, Vec<f64>) {
            let mut c = cfg.clone();
            c.residual = residual;
            let weights = root.join(out);
            let outcome = cmd_train(
                &root.join(manifest).join("manifest.csv"),
                &weights,
                Some(&root.join(format!("{out}.log"))),
                EXPERIMENT_SEED,
                &c,
            )
            .unwrap();
            (weights, outcome.losses)
        };
        let (w_a, healthy_losses) = train("train_healthy", "unet_healthy.tnet", false);
        let (w_b, _) = train("train_diverse", "unet_diverse.tnet", false);
        let (w_r, _) = train("train_diverse", "resunet_diverse.tnet", true);

        let healthy_manifest = root.join("test_healthy/manifest.csv");
        let lesion_manifest = root.join("test_lesion/manifest.csv");
        predict_dataset(&w_a, &healthy_manifest, &root.join("pred_h_a"), &cfg);
        predict_dataset(&w_a, &lesion_manifest, &root.join("pred_l_a"), &cfg);
        predict_dataset(&w_b, &lesion_manifest, &root.join("pred_l_b"), &cfg);
        predict_dataset(&w_r, &lesion_manifest, &root.join("pred_l_r"), &cfg);

        let eval = |pred: &str, manifest: &Path, tag: &str| -> EvalOutcome {
            cmd_eval(
                &root.join(pred),
                manifest,
                EvalMode::PerLung,
                &root.join(format!("report_{tag}.csv")),
                &root.join(format!("aggregate_{tag}.csv")),
            )
            .unwrap()
        };
        let healthy = eval("pred_h_a", &healthy_manifest, "healthy_a");
        let lesion_a = eval("pred_l_a", &lesion_manifest, "lesion_a");
        let lesion_b = eval("pred_l_b", &lesion_manifest, "lesion_b");
        let lesion_r = eval("pred_l_r", &lesion_manifest, "lesion_r");

        let ttest_b_vs_a = cmd_ttest(
            &root.join("report_lesion_b.csv"),
            &root.join("report_lesion_a.csv"),
            MetricKind::Dsc,
        )
        .unwrap();

        Experiments {
            _dir: dir,
            healthy,
            lesion_a,
            lesion_b,
            lesion_r,
            ttest_b_vs_a,
            healthy_losses,
        }
    })
}

#[test]
fn training_loss_falls_within_fifty_steps() {
    // Training-progress check on the shared healthy run: the mean loss of
    // steps 41-50 must be strictly below the mean of steps 1-10.
    let losses = &experiments().healthy_losses;
    assert!(losses.len() >= 50, "need at least 50 logged steps");
    let early: f64 = losses[..10].iter().sum::<f64>() / 10.0;
    let late: f64 = losses[40..50].iter().sum::<f64>() / 10.0;
    assert!(
        late < early,
        "mean loss of steps 41-50 ({late:.4}) not below steps 1-10 ({early:.4})"
    );
}

#[test]
fn criterion_01_metric_oracle_equivalence() {
    let start = Instant::now();
    for seed in 0..100u64 {
        let (a, b) = random_region_pair(seed, 16);
        assert_eq!(
            dice(&a, &b).unwrap(),
            dice_rational(&a, &b),
            "dice mismatch at seed {seed}"
        );
        let hd = hd95(&a, &b).unwrap();
        let hd_oracle = hd95_brute(&a, &b).unwrap();
        assert!(
            (hd - hd_oracle).abs() < 1e-9,
            "hd95 {hd} vs oracle {hd_oracle} at seed {seed}"
        );
        let ms = msd(&a, &b).unwrap();
        let ms_oracle = msd_brute(&a, &b).unwrap();
        assert!(
            (ms - ms_oracle).abs() < 1e-9,
            "msd {ms} vs oracle {ms_oracle} at seed {seed}"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}, budget 1 min");
    println!(
        "criterion 1 (metric oracle equivalence, 100 pairs in {:.1}s): PASS",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_02_analytic_metric_cases() {
    let dims = Dims3::new(4, 3, 3).unwrap();
    let sp = Spacing3::new(1.5, 1.0, 1.0).unwrap();
    let region = |fg: &[(usize, usize, usize)]| {
        let mut mask = vec![false; dims.count()];
        for &(z, y, x) in fg {
            mask[dims.index(z, y, x)] = true;
        }
        Region3::new(dims, sp, mask).unwrap()
    };
    // Dice identity and disjoint, exact.
    let a = region(&[(0, 0, 0), (0, 1, 1)]);
    let b = region(&[(1, 2, 2), (2, 0, 1)]);
    assert_eq!(dice(&a, &a).unwrap(), 1.0);
    assert_eq!(dice(&a, &b).unwrap(), 0.0);
    // Single-voxel pair: HD95 equals the Euclidean spacing distance.
    let p = region(&[(0, 0, 0)]);
    let q = region(&[(2, 1, 1)]);
    let expected = (2.0f64 * 1.5).hypot(1.0f64.hypot(1.0));
    assert_eq!(hd95(&p, &q).unwrap(), expected);
    // Parallel single-voxel-thick planes: MSD equals the plane gap.
    let plane_a: Vec<_> = (0..3).flat_map(|y| (0..3).map(move |x| (0usize, y, x))).collect();
    let plane_b: Vec<_> = (0..3).flat_map(|y| (0..3).map(move |x| (2usize, y, x))).collect();
    let gap = 2.0 * 1.5;
    assert_eq!(msd(&region(&plane_a), &region(&plane_b)).unwrap(), gap);
    assert_eq!(hd95(&region(&plane_a), &region(&plane_b)).unwrap(), gap);
    println!("criterion 2 (analytic Dice/HD95/MSD cases): PASS");
}

#[test]
fn criterion_03_gradient_verification() {
    use lungseg::tinynet::layers::*;
    let start = Instant::now();
    let t = |vals: &[f64], s: (usize, usize, usize, usize)| {
        lungseg::tinynet::Tensor4::from_vec(s.0, s.1, s.2, s.3, vals.to_vec()).unwrap()
    };
    for seed in 0..20u64 {
        // conv 3x3.
        let x = random_tensor_kink_free(seed * 11 + 1, 1, 2, 4, 4, 1.0);
        let w = random_tensor_kink_free(seed * 11 + 2, 2, 2, 3, 3, 0.8);
        let r = random_tensor_kink_free(seed * 11 + 3, 1, 2, 4, 4, 1.0);
        let (gx, gw) = conv2d_backward(&x, &w, &r);
        let mut v = x.data.clone();
        check_grad_vec(&mut v, &gx.data, |vals| {
            weighted_sum(&conv2d_forward(&t(vals, (1, 2, 4, 4)), &w), &r)
        }, "c3 conv input");
        let mut v = w.data.clone();
        check_grad_vec(&mut v, &gw.data, |vals| {
            weighted_sum(&conv2d_forward(&x, &t(vals, (2, 2, 3, 3))), &r)
        }, "c3 conv weight");

        // Batch norm (train mode).
        let x = random_tensor_kink_free(seed * 11 + 4, 2, 2, 3, 3, 1.5);
        let gamma = random_tensor_kink_free(seed * 11 + 5, 1, 2, 1, 1, 1.2);
        let beta = random_tensor_kink_free(seed * 11 + 6, 1, 2, 1, 1, 0.5);
        let r = random_tensor_kink_free(seed * 11 + 7, 2, 2, 3, 3, 1.0);
        let (_, cache, _) = bn_forward_train(&x, &gamma, &beta);
        let (gx, gg, gb) = bn_backward(&cache, &gamma, &r);
        let mut v = x.data.clone();
        check_grad_vec(&mut v, &gx.data, |vals| {
            weighted_sum(&bn_forward_train(&t(vals, (2, 2, 3, 3)), &gamma, &beta).0, &r)
        }, "c3 bn input");
        let mut v = gamma.data.clone();
        check_grad_vec(&mut v, &gg.data, |vals| {
            weighted_sum(&bn_forward_train(&x, &t(vals, (1, 2, 1, 1)), &beta).0, &r)
        }, "c3 bn gamma");
        let mut v = beta.data.clone();
        check_grad_vec(&mut v, &gb.data, |vals| {
            weighted_sum(&bn_forward_train(&x, &gamma, &t(vals, (1, 2, 1, 1))).0, &r)
        }, "c3 bn beta");

        // ReLU (kink-free inputs).
        let x = random_tensor_kink_free(seed * 11 + 8, 1, 2, 4, 4, 2.0);
        let r = random_tensor_kink_free(seed * 11 + 9, 1, 2, 4, 4, 1.0);
        let gx = relu_backward(&relu_forward(&x), &r);
        let mut v = x.data.clone();
        check_grad_vec(&mut v, &gx.data, |vals| {
            weighted_sum(&relu_forward(&t(vals, (1, 2, 4, 4))), &r)
        }, "c3 relu");

        // 2x2 max pool.
        let x = random_tensor_kink_free(seed * 11 + 10, 1, 2, 4, 4, 1.0);
        let r = random_tensor_kink_free(seed * 13 + 1, 1, 2, 2, 2, 1.0);
        let (_, pool) = maxpool2_forward(&x);
        let gx = maxpool2_backward(&pool, &r);
        let mut v = x.data.clone();
        check_grad_vec(&mut v, &gx.data, |vals| {
            weighted_sum(&maxpool2_forward(&t(vals, (1, 2, 4, 4))).0, &r)
        }, "c3 maxpool");

        // 2x transposed conv.
        let x = random_tensor_kink_free(seed * 13 + 2, 1, 2, 2, 2, 1.0);
        let w = random_tensor_kink_free(seed * 13 + 3, 2, 2, 2, 2, 0.8);
        let r = random_tensor_kink_free(seed * 13 + 4, 1, 2, 4, 4, 1.0);
        let (gx, gw) = deconv2x2_backward(&x, &w, &r);
        let mut v = x.data.clone();
        check_grad_vec(&mut v, &gx.data, |vals| {
            weighted_sum(&deconv2x2_forward(&t(vals, (1, 2, 2, 2)), &w), &r)
        }, "c3 deconv input");
        let mut v = w.data.clone();
        check_grad_vec(&mut v, &gw.data, |vals| {
            weighted_sum(&deconv2x2_forward(&x, &t(vals, (2, 2, 2, 2))), &r)
        }, "c3 deconv weight");

        // Skip concatenation.
        let a = random_tensor_kink_free(seed * 13 + 5, 1, 2, 3, 3, 1.0);
        let b = random_tensor_kink_free(seed * 13 + 6, 1, 1, 3, 3, 1.0);
        let r = random_tensor_kink_free(seed * 13 + 7, 1, 3, 3, 3, 1.0);
        let (ga, gb) = concat_backward(&r, 2, 1);
        let mut v = a.data.clone();
        check_grad_vec(&mut v, &ga.data, |vals| {
            weighted_sum(&concat_channels(&t(vals, (1, 2, 3, 3)), &b), &r)
        }, "c3 concat a");
        let mut v = b.data.clone();
        check_grad_vec(&mut v, &gb.data, |vals| {
            weighted_sum(&concat_channels(&a, &t(vals, (1, 1, 3, 3))), &r)
        }, "c3 concat b");
    }

    // Full depth-1 width-2 networks, every trainable parameter, 20 seeds.
    // The residual variant also covers the residual-add path.
    for seed in 0..20u64 {
        let cfg = NetConfig {
            depth: 1,
            base_channels: 2,
            residual: seed % 2 == 1,
            ..Default::default()
        };
        let store = init_params(&cfg, seed);
        let batch = random_tensor_kink_free(seed ^ 0x5A5A, 1, 1, 8, 8, 1.0);
        let labels = LabelBatch::new(1, 8, 8, (0..64).map(|i| ((i + seed as usize) % 3) as u8).collect());
        let loss_of = |s: &TensorStore| -> f64 {
            let mut s = s.clone();
            let (logits, _) = forward_train(&cfg, &mut s, &batch).unwrap();
            loss_softmax_ce(&logits, &labels).unwrap().0
        };
        let mut work = store.clone();
        let (logits, cache) = forward_train(&cfg, &mut work, &batch).unwrap();
        let (_, grad_logits) = loss_softmax_ce(&logits, &labels).unwrap();
        let grads = backward(&cfg, &work, &cache, &grad_logits).unwrap();
        for name in cfg.trainable_names() {
            let analytic = grads.get(&name).unwrap().data.clone();
            let mut values = store.get(&name).unwrap().data.clone();
            check_grad_vec(
                &mut values,
                &analytic,
                |vals| {
                    let mut s = store.clone();
                    s.get_mut(&name).unwrap().data.copy_from_slice(vals);
                    loss_of(&s)
                },
                &format!("c3 net[{name}] seed {seed}"),
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs() < 120, "took {elapsed:?}, budget 2 min");
    println!(
        "criterion 3 (gradient verification, 20 seeds in {:.1}s): PASS",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_04_end_to_end_learning() {
    let start = Instant::now();
    let exp = experiments();
    let agg = &exp.healthy.aggregate;
    assert!(
        agg.dsc_mean >= 0.95,
        "mean per-lung DSC {} < 0.95 on held-out healthy phantoms",
        agg.dsc_mean
    );
    println!(
        "criterion 4 (end-to-end learning, DSC {:.4} on 20 healthy phantoms, shared-train wall {:.0}s): PASS",
        agg.dsc_mean,
        start.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_05_diversity_reproduction() {
    let exp = experiments();
    let a = exp.lesion_a.aggregate.dsc_mean;
    let b = exp.lesion_b.aggregate.dsc_mean;
    assert!(
        b - a >= 0.02,
        "diverse-trained DSC {b:.4} minus healthy-trained {a:.4} below 0.02"
    );
    assert!(
        exp.ttest_b_vs_a.p_two_sided < 0.05,
        "paired t-test p {} not significant",
        exp.ttest_b_vs_a.p_two_sided
    );
    assert!(exp.ttest_b_vs_a.t > 0.0, "advantage has the wrong sign");
    println!(
        "criterion 5 (diversity: DSC {b:.4} vs {a:.4}, p {:.2e}): PASS",
        exp.ttest_b_vs_a.p_two_sided
    );
}

#[test]
fn criterion_06_architecture_marginality() {
    let exp = experiments();
    let unet = exp.lesion_b.aggregate.dsc_mean;
    let resunet = exp.lesion_r.aggregate.dsc_mean;
    assert!(
        (unet - resunet).abs() <= 0.02,
        "U-net {unet:.4} vs ResU-net {resunet:.4}: architecture moved mean DSC by more than 0.02"
    );
    println!(
        "criterion 6 (architecture marginality: U-net {unet:.4} vs ResU-net {resunet:.4}): PASS"
    );
}

#[test]
fn criterion_07_tumor_overlap_direction() {
    let exp = experiments();
    let mean = |m: &std::collections::BTreeMap<String, f64>| {
        m.values().sum::<f64>() / m.len() as f64
    };
    assert_eq!(exp.lesion_a.tumor_overlaps.len(), 20, "every lesion case has a tumour");
    let a = mean(&exp.lesion_a.tumor_overlaps);
    let b = mean(&exp.lesion_b.tumor_overlaps);
    assert!(
        b > a,
        "diverse-trained tumour overlap {b:.4} not above healthy-trained {a:.4}"
    );
    println!("criterion 7 (tumour overlap {b:.4} > {a:.4}): PASS");
}

#[test]
fn criterion_08_dense_area_removal() {
    let start = Instant::now();
    let mut removed_frac = Vec::new();
    let mut retained_frac = Vec::new();
    for i in 0..20u64 {
        let cfg = PhantomConfig {
            tumor_prob: 0.0,
            effusion_prob: 1.0,
            consolidation_prob: 0.0,
            ..PhantomConfig::new(Profile::Diverse, 5000 + i)
        };
        let p = generate(&cfg).unwrap();
        let cleaned = remove_dense_areas(&p.labels, &p.volume).unwrap();
        let mut effusion_total = 0usize;
        let mut effusion_removed = 0usize;
        let mut parenchyma_total = 0usize;
        let mut parenchyma_kept = 0usize;
        for (idx, (&before, &after)) in p.labels.labels().iter().zip(cleaned.labels()).enumerate() {
            if before == 0 {
                continue;
            }
            if p.effusion_mask.mask()[idx] {
                effusion_total += 1;
                if after == 0 {
                    effusion_removed += 1;
                }
            } else {
                parenchyma_total += 1;
                if after != 0 {
                    parenchyma_kept += 1;
                }
            }
        }
        assert!(effusion_total > 0, "phantom {i} lacks an effusion");
        removed_frac.push(effusion_removed as f64 / effusion_total as f64);
        retained_frac.push(parenchyma_kept as f64 / parenchyma_total as f64);
    }
    let removed = removed_frac.iter().sum::<f64>() / removed_frac.len() as f64;
    let retained = retained_frac.iter().sum::<f64>() / retained_frac.len() as f64;
    assert!(removed >= 0.95, "only {removed:.4} of effusion voxels removed");
    assert!(retained >= 0.99, "only {retained:.4} of parenchyma voxels retained");
    println!(
        "criterion 8 (dense removal: {removed:.4} effusion removed, {retained:.4} parenchyma kept, {:.0}s): PASS",
        start.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_09_determinism() {
    // Tiny but complete train + eval, run twice with identical seeds in
    // single-threaded mode; weight files and metric CSVs must be
    // byte-identical.
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let mut cfg = PipelineConfig::default();
    cfg.target_resolution = 32;
    cfg.depth = 2;
    cfg.base_channels = 2;
    cfg.epochs = 1;
    cfg.batch_size = 4;
    let mut template = PhantomConfig::new(Profile::Healthy, 7000);
    template.dims = Dims3::new(16, 48, 48).unwrap();
    generate_dataset(2, &template, Split::Train, &root.join("data")).unwrap();
    let manifest = root.join("data/manifest.csv");

    let run = |tag: &str| -> (Vec<u8>, Vec<u8>, Vec<u8>) {
        let weights = root.join(format!("w_{tag}.tnet"));
        cmd_train(&manifest, &weights, None, 9, &cfg).unwrap();
        let store = load_weights(&weights).unwrap();
        let net = NetConfig::infer_from_store(&store).unwrap();
        let pred = root.join(format!("pred_{tag}"));
        std::fs::create_dir_all(&pred).unwrap();
        for e in &load_manifest(&manifest).unwrap().entries {
            let v = load_volume(&e.image_path).unwrap();
            let mask = infer_volume(&net, &store, &v, false, &cfg).unwrap();
            save_mask(&mask, &pred.join(format!("{}.rvol", e.case_id))).unwrap();
        }
        let report = root.join(format!("report_{tag}.csv"));
        let agg = root.join(format!("agg_{tag}.csv"));
        cmd_eval(&pred, &manifest, EvalMode::PerLung, &report, &agg).unwrap();
        (
            std::fs::read(&weights).unwrap(),
            std::fs::read(&report).unwrap(),
            std::fs::read(&agg).unwrap(),
        )
    };
    let (w1, r1, a1) = run("one");
    let (w2, r2, a2) = run("two");
    assert_eq!(w1, w2, "weight files differ between identical runs");
    assert_eq!(r1, r2, "report CSVs differ between identical runs");
    assert_eq!(a1, a2, "aggregate CSVs differ between identical runs");
    println!("criterion 9 (byte-identical weights and CSVs across reruns): PASS");
}

#[test]
fn criterion_10_t_test_unit() {
    let r = paired_t_test(&[1.0, 2.0, 4.0], &[0.0, 1.0, 2.0]).unwrap();
    assert!((r.t - 4.0).abs() < 1e-12, "t = {}", r.t);
    assert_eq!(r.df, 2);
    // Closed-form df=2 CDF: cdf(t) = 1/2 + t / (2 sqrt(t^2 + 2)).
    let expected = 2.0 * (1.0 - (0.5 + 4.0 / (2.0 * 18.0f64.sqrt())));
    assert!(
        (r.p_two_sided - expected).abs() < 1e-4,
        "p {} vs closed form {expected}",
        r.p_two_sided
    );
    assert!((r.p_two_sided - 0.0572).abs() < 1e-4);
    println!(
        "criterion 10 (t-test unit: t {:.1}, df {}, p {:.4}): PASS",
        r.t, r.df, r.p_two_sided
    );
}
