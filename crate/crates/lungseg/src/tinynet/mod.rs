//! From-scratch U-net (and the ResU-net variant) with batch normalization
//! after every convolution, exact backward passes, SGD with momentum, and
//! bit-exact weight persistence.
//!
//! The encoder halves the spatial dims per level (2x2 max pool) while
//! doubling channels; the decoder mirrors it with 2x2 transposed
//! convolutions (nearest-neighbor upsampling behind a flag) and skip
//! concatenations. With `residual`, every down- and up-sampling block adds
//! a projected shortcut from its input before the final activation.

pub mod layers;
pub mod loss;
pub mod optim;
pub mod store;
pub mod tensor;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

pub use layers::{BnCache, PoolCache, BN_EPS, BN_MOMENTUM};
pub use loss::{loss_softmax_ce, LabelBatch, LossError};
pub use optim::sgd_momentum_step;
pub use store::{load_weights, save_weights, StoreError, TensorStore};
pub use tensor::{Tensor4, TensorError};

use layers::*;

use crate::volgrid::LabelPlane;

#[derive(Debug, Error)]
pub enum TinynetError {
    #[error("bad input batch: {0}")]
    BadInput(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Decoder upsampling flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Upsample {
    /// 2x2 transposed convolution, stride 2.
    Transposed,
    /// Nearest-neighbor 2x upsampling followed by a 3x3 convolution.
    Nearest,
}

/// Architecture parameters. `residual` turns the U-net into the ResU-net.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    pub depth: usize,
    pub base_channels: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub residual: bool,
    pub upsample: Upsample,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            depth: 3,
            base_channels: 8,
            in_channels: 1,
            out_channels: 3,
            residual: false,
            upsample: Upsample::Transposed,
        }
    }
}

/// What role a tensor plays in the store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Trainable weight or bias.
    Trainable,
    /// Batch-norm running statistic (persisted, not trained).
    RunningStat,
}

impl NetConfig {
    fn enc_channels(&self, i: usize) -> (usize, usize) {
        let a = if i == 0 {
            self.in_channels
        } else {
            self.base_channels << (i - 1)
        };
        (a, self.base_channels << i)
    }

    fn bott_channels(&self) -> (usize, usize) {
        (
            self.base_channels << (self.depth - 1),
            self.base_channels << self.depth,
        )
    }

    fn up_channels(&self, i: usize) -> (usize, usize) {
        (self.base_channels << (i + 1), self.base_channels << i)
    }

    /// Every tensor the net requires, in declaration order, with its shape
    /// and kind.
    pub fn tensor_specs(&self) -> Vec<(String, (usize, usize, usize, usize), ParamKind)> {
        assert!(self.depth >= 1 && self.base_channels >= 1);
        let mut specs = Vec::new();
        let block = |specs: &mut Vec<(String, (usize, usize, usize, usize), ParamKind)>,
                     p: &str,
                     a: usize,
                     b: usize,
                     residual: bool| {
            specs.push((format!("{p}.conv1.w"), (b, a, 3, 3), ParamKind::Trainable));
            specs.push((format!("{p}.bn1.gamma"), (1, b, 1, 1), ParamKind::Trainable));
            specs.push((format!("{p}.bn1.beta"), (1, b, 1, 1), ParamKind::Trainable));
            specs.push((
                format!("{p}.bn1.running_mean"),
                (1, b, 1, 1),
                ParamKind::RunningStat,
            ));
            specs.push((
                format!("{p}.bn1.running_var"),
                (1, b, 1, 1),
                ParamKind::RunningStat,
            ));
            specs.push((format!("{p}.conv2.w"), (b, b, 3, 3), ParamKind::Trainable));
            specs.push((format!("{p}.bn2.gamma"), (1, b, 1, 1), ParamKind::Trainable));
            specs.push((format!("{p}.bn2.beta"), (1, b, 1, 1), ParamKind::Trainable));
            specs.push((
                format!("{p}.bn2.running_mean"),
                (1, b, 1, 1),
                ParamKind::RunningStat,
            ));
            specs.push((
                format!("{p}.bn2.running_var"),
                (1, b, 1, 1),
                ParamKind::RunningStat,
            ));
            if residual {
                specs.push((format!("{p}.proj.w"), (b, a, 1, 1), ParamKind::Trainable));
                specs.push((format!("{p}.bnp.gamma"), (1, b, 1, 1), ParamKind::Trainable));
                specs.push((format!("{p}.bnp.beta"), (1, b, 1, 1), ParamKind::Trainable));
                specs.push((
                    format!("{p}.bnp.running_mean"),
                    (1, b, 1, 1),
                    ParamKind::RunningStat,
                ));
                specs.push((
                    format!("{p}.bnp.running_var"),
                    (1, b, 1, 1),
                    ParamKind::RunningStat,
                ));
            }
        };
        for i in 0..self.depth {
            let (a, b) = self.enc_channels(i);
            block(&mut specs, &format!("enc{i}"), a, b, self.residual);
        }
        {
            let (a, b) = self.bott_channels();
            block(&mut specs, "bott", a, b, self.residual);
        }
        for i in (0..self.depth).rev() {
            let (a, b) = self.up_channels(i);
            match self.upsample {
                Upsample::Transposed => {
                    specs.push((format!("up{i}.deconv.w"), (a, b, 2, 2), ParamKind::Trainable));
                }
                Upsample::Nearest => {
                    specs.push((format!("up{i}.conv.w"), (b, a, 3, 3), ParamKind::Trainable));
                }
            }
            specs.push((format!("up{i}.bnu.gamma"), (1, b, 1, 1), ParamKind::Trainable));
            specs.push((format!("up{i}.bnu.beta"), (1, b, 1, 1), ParamKind::Trainable));
            specs.push((
                format!("up{i}.bnu.running_mean"),
                (1, b, 1, 1),
                ParamKind::RunningStat,
            ));
            specs.push((
                format!("up{i}.bnu.running_var"),
                (1, b, 1, 1),
                ParamKind::RunningStat,
            ));
            block(&mut specs, &format!("dec{i}"), 2 * b, b, self.residual);
        }
        specs.push((
            "final.w".into(),
            (self.out_channels, self.base_channels, 1, 1),
            ParamKind::Trainable,
        ));
        specs.push((
            "final.b".into(),
            (1, self.out_channels, 1, 1),
            ParamKind::Trainable,
        ));
        specs
    }

    /// Names of the trainable parameters, in declaration order.
    pub fn trainable_names(&self) -> Vec<String> {
        self.tensor_specs()
            .into_iter()
            .filter(|(_, _, kind)| *kind == ParamKind::Trainable)
            .map(|(name, _, _)| name)
            .collect()
    }

    /// Check that `store` holds every required tensor with the right shape.
    /// Extra tensors (momentum buffers) are allowed.
    pub fn validate_store(&self, store: &TensorStore) -> Result<(), StoreError> {
        for (name, shape, _) in self.tensor_specs() {
            let t = store.get(&name)?;
            if t.shape() != shape {
                return Err(StoreError::ShapeMismatch {
                    name,
                    expected: shape,
                    found: t.shape(),
                });
            }
        }
        Ok(())
    }

    /// Reconstruct the architecture from a weight store's tensor names and
    /// shapes, then validate the store against it.
    pub fn infer_from_store(store: &TensorStore) -> Result<Self, StoreError> {
        let enc0 = store.get("enc0.conv1.w")?;
        let base_channels = enc0.n;
        let in_channels = enc0.c;
        let mut depth = 1;
        while store.contains(&format!("enc{depth}.conv1.w")) {
            depth += 1;
        }
        let final_w = store.get("final.w")?;
        let cfg = NetConfig {
            depth,
            base_channels,
            in_channels,
            out_channels: final_w.n,
            residual: store.contains("enc0.proj.w"),
            upsample: if store.contains("up0.deconv.w") {
                Upsample::Transposed
            } else {
                Upsample::Nearest
            },
        };
        cfg.validate_store(store)?;
        Ok(cfg)
    }
}

/// He-normal initialization for convolutions, gamma 1 / beta 0 for batch
/// norm, zero bias, zero running mean, unit running variance.
pub fn init_params(cfg: &NetConfig, seed: u64) -> TensorStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = TensorStore::new();
    for (name, (n, c, h, w), kind) in cfg.tensor_specs() {
        let t = match kind {
            ParamKind::Trainable => {
                if name.ends_with(".gamma") {
                    Tensor4::from_vec(n, c, h, w, vec![1.0; n * c * h * w]).unwrap()
                } else if name.ends_with(".beta") || name == "final.b" {
                    Tensor4::zeros(n, c, h, w)
                } else {
                    // fan_in = in_channels * kernel area; deconv stores
                    // [in, out, k, k] so fan_in uses dim 0 there.
                    let fan_in = if name.contains(".deconv.") {
                        n * h * w
                    } else {
                        c * h * w
                    };
                    let std = (2.0 / fan_in as f64).sqrt();
                    let dist = Normal::new(0.0, std).unwrap();
                    let data = (0..n * c * h * w).map(|_| dist.sample(&mut rng)).collect();
                    Tensor4::from_vec(n, c, h, w, data).unwrap()
                }
            }
            ParamKind::RunningStat => {
                if name.ends_with("running_var") {
                    Tensor4::from_vec(n, c, h, w, vec![1.0; n * c * h * w]).unwrap()
                } else {
                    Tensor4::zeros(n, c, h, w)
                }
            }
        };
        store.insert(name, t);
    }
    store
}

/// Caches of one conv-bn-relu-conv-bn(-residual)-relu block.
struct BlockCache {
    x_in: Tensor4,
    a1: Tensor4,
    bn1: BnCache,
    bn2: BnCache,
    bnp: Option<BnCache>,
    y: Tensor4,
}

/// Caches of one upsampling stage.
struct UpCache {
    x_in: Tensor4,
    /// Nearest mode only: the upsampled tensor fed into the 3x3 conv.
    upsampled: Option<Tensor4>,
    bnu: BnCache,
    y: Tensor4,
}

/// Everything the backward pass needs from a train-mode forward pass.
pub struct ForwardCache {
    enc: Vec<BlockCache>,
    pools: Vec<PoolCache>,
    bott: BlockCache,
    /// (level, cache) in execution order (deepest level first).
    ups: Vec<(usize, UpCache)>,
    decs: Vec<(usize, BlockCache)>,
    final_in: Tensor4,
    batch_shape: (usize, usize, usize, usize),
}

fn get2(store: &TensorStore, a: &str, b: &str) -> Result<(Tensor4, Tensor4), StoreError> {
    Ok((store.get(a)?.clone(), store.get(b)?.clone()))
}

fn bn_train_step(
    store: &mut TensorStore,
    prefix: &str,
    x: &Tensor4,
) -> Result<(Tensor4, BnCache), StoreError> {
    let (gamma, beta) = get2(store, &format!("{prefix}.gamma"), &format!("{prefix}.beta"))?;
    let (out, cache, stats) = bn_forward_train(x, &gamma, &beta);
    bn_update_running(
        store.get_mut(&format!("{prefix}.running_mean"))?,
        &stats.mean,
    );
    bn_update_running(store.get_mut(&format!("{prefix}.running_var"))?, &stats.var);
    Ok((out, cache))
}

fn bn_eval_step(store: &TensorStore, prefix: &str, x: &Tensor4) -> Result<Tensor4, StoreError> {
    Ok(bn_forward_eval(
        x,
        store.get(&format!("{prefix}.gamma"))?,
        store.get(&format!("{prefix}.beta"))?,
        store.get(&format!("{prefix}.running_mean"))?,
        store.get(&format!("{prefix}.running_var"))?,
    ))
}

fn block_forward_train(
    store: &mut TensorStore,
    prefix: &str,
    x: &Tensor4,
    residual: bool,
) -> Result<(Tensor4, BlockCache), StoreError> {
    let w1 = store.get(&format!("{prefix}.conv1.w"))?.clone();
    let c1 = conv2d_forward(x, &w1);
    let (b1, bn1) = bn_train_step(store, &format!("{prefix}.bn1"), &c1)?;
    let a1 = relu_forward(&b1);
    let w2 = store.get(&format!("{prefix}.conv2.w"))?.clone();
    let c2 = conv2d_forward(&a1, &w2);
    let (mut pre, bn2) = bn_train_step(store, &format!("{prefix}.bn2"), &c2)?;
    let bnp = if residual {
        let wp = store.get(&format!("{prefix}.proj.w"))?.clone();
        let p = conv2d_forward(x, &wp);
        let (bp, bnp) = bn_train_step(store, &format!("{prefix}.bnp"), &p)?;
        pre.add_assign(&bp);
        Some(bnp)
    } else {
        None
    };
    let y = relu_forward(&pre);
    Ok((
        y.clone(),
        BlockCache {
            x_in: x.clone(),
            a1,
            bn1,
            bn2,
            bnp,
            y,
        },
    ))
}

fn block_forward_eval(
    store: &TensorStore,
    prefix: &str,
    x: &Tensor4,
    residual: bool,
) -> Result<Tensor4, StoreError> {
    let c1 = conv2d_forward(x, store.get(&format!("{prefix}.conv1.w"))?);
    let a1 = relu_forward(&bn_eval_step(store, &format!("{prefix}.bn1"), &c1)?);
    let c2 = conv2d_forward(&a1, store.get(&format!("{prefix}.conv2.w"))?);
    let mut pre = bn_eval_step(store, &format!("{prefix}.bn2"), &c2)?;
    if residual {
        let p = conv2d_forward(x, store.get(&format!("{prefix}.proj.w"))?);
        pre.add_assign(&bn_eval_step(store, &format!("{prefix}.bnp"), &p)?);
    }
    Ok(relu_forward(&pre))
}

fn block_backward(
    store: &TensorStore,
    prefix: &str,
    cache: &BlockCache,
    grad_y: &Tensor4,
    grads: &mut TensorStore,
) -> Result<Tensor4, StoreError> {
    let g_pre = relu_backward(&cache.y, grad_y);
    let gamma2 = store.get(&format!("{prefix}.bn2.gamma"))?;
    let (g_c2, g_gamma2, g_beta2) = bn_backward(&cache.bn2, gamma2, &g_pre);
    let w2 = store.get(&format!("{prefix}.conv2.w"))?;
    let (g_a1, g_w2) = conv2d_backward(&cache.a1, w2, &g_c2);
    let g_b1 = relu_backward(&cache.a1, &g_a1);
    let gamma1 = store.get(&format!("{prefix}.bn1.gamma"))?;
    let (g_c1, g_gamma1, g_beta1) = bn_backward(&cache.bn1, gamma1, &g_b1);
    let w1 = store.get(&format!("{prefix}.conv1.w"))?;
    let (mut g_x, g_w1) = conv2d_backward(&cache.x_in, w1, &g_c1);
    if let Some(bnp) = &cache.bnp {
        let gammap = store.get(&format!("{prefix}.bnp.gamma"))?;
        let (g_p, g_gammap, g_betap) = bn_backward(bnp, gammap, &g_pre);
        let wp = store.get(&format!("{prefix}.proj.w"))?;
        let (g_x_res, g_wp) = conv2d_backward(&cache.x_in, wp, &g_p);
        g_x.add_assign(&g_x_res);
        grads.insert(format!("{prefix}.proj.w"), g_wp);
        grads.insert(format!("{prefix}.bnp.gamma"), g_gammap);
        grads.insert(format!("{prefix}.bnp.beta"), g_betap);
    }
    grads.insert(format!("{prefix}.conv1.w"), g_w1);
    grads.insert(format!("{prefix}.bn1.gamma"), g_gamma1);
    grads.insert(format!("{prefix}.bn1.beta"), g_beta1);
    grads.insert(format!("{prefix}.conv2.w"), g_w2);
    grads.insert(format!("{prefix}.bn2.gamma"), g_gamma2);
    grads.insert(format!("{prefix}.bn2.beta"), g_beta2);
    Ok(g_x)
}

fn check_batch(cfg: &NetConfig, batch: &Tensor4) -> Result<(), TinynetError> {
    if batch.c != cfg.in_channels {
        return Err(TinynetError::BadInput(format!(
            "batch has {} channels, net expects {}",
            batch.c, cfg.in_channels
        )));
    }
    let div = 1usize << cfg.depth;
    if batch.h % div != 0 || batch.w % div != 0 {
        return Err(TinynetError::BadInput(format!(
            "spatial dims {}x{} not divisible by 2^depth = {div}",
            batch.h, batch.w
        )));
    }
    Ok(())
}

/// Train-mode forward pass: returns logits (n, out_channels, h, w) and the
/// cache for [`backward`]. Updates batch-norm running statistics in the
/// store; no other tensor is touched.
pub fn forward_train(
    cfg: &NetConfig,
    store: &mut TensorStore,
    batch: &Tensor4,
) -> Result<(Tensor4, ForwardCache), TinynetError> {
    check_batch(cfg, batch)?;
    let mut skips: Vec<Tensor4> = Vec::with_capacity(cfg.depth);
    let mut enc = Vec::with_capacity(cfg.depth);
    let mut pools = Vec::with_capacity(cfg.depth);
    let mut x = batch.clone();
    for i in 0..cfg.depth {
        let (y, cache) = block_forward_train(store, &format!("enc{i}"), &x, cfg.residual)?;
        skips.push(y.clone());
        enc.push(cache);
        let (pooled, pc) = maxpool2_forward(&y);
        pools.push(pc);
        x = pooled;
    }
    let (mut x, bott) = block_forward_train(store, "bott", &x, cfg.residual)?;
    let mut ups = Vec::with_capacity(cfg.depth);
    let mut decs = Vec::with_capacity(cfg.depth);
    for i in (0..cfg.depth).rev() {
        let (y, upc) = match cfg.upsample {
            Upsample::Transposed => {
                let w = store.get(&format!("up{i}.deconv.w"))?.clone();
                let u = deconv2x2_forward(&x, &w);
                let (b, bnu) = bn_train_step(store, &format!("up{i}.bnu"), &u)?;
                let y = relu_forward(&b);
                (
                    y.clone(),
                    UpCache {
                        x_in: x.clone(),
                        upsampled: None,
                        bnu,
                        y,
                    },
                )
            }
            Upsample::Nearest => {
                let u0 = upsample_nearest2_forward(&x);
                let w = store.get(&format!("up{i}.conv.w"))?.clone();
                let u = conv2d_forward(&u0, &w);
                let (b, bnu) = bn_train_step(store, &format!("up{i}.bnu"), &u)?;
                let y = relu_forward(&b);
                (
                    y.clone(),
                    UpCache {
                        x_in: x.clone(),
                        upsampled: Some(u0),
                        bnu,
                        y,
                    },
                )
            }
        };
        ups.push((i, upc));
        let cat = concat_channels(&y, &skips[i]);
        let (y, cache) = block_forward_train(store, &format!("dec{i}"), &cat, cfg.residual)?;
        decs.push((i, cache));
        x = y;
    }
    let final_in = x;
    let w = store.get("final.w")?;
    let mut logits = conv2d_forward(&final_in, w);
    bias_add_forward(&mut logits, store.get("final.b")?);
    let batch_shape = batch.shape();
    Ok((
        logits,
        ForwardCache {
            enc,
            pools,
            bott,
            ups,
            decs,
            final_in,
            batch_shape,
        },
    ))
}

/// Eval-mode forward pass: a pure function of (weights, input) using the
/// stored running statistics.
pub fn forward_eval(
    cfg: &NetConfig,
    store: &TensorStore,
    batch: &Tensor4,
) -> Result<Tensor4, TinynetError> {
    check_batch(cfg, batch)?;
    let mut skips: Vec<Tensor4> = Vec::with_capacity(cfg.depth);
    let mut x = batch.clone();
    for i in 0..cfg.depth {
        let y = block_forward_eval(store, &format!("enc{i}"), &x, cfg.residual)?;
        let (pooled, _) = maxpool2_forward(&y);
        skips.push(y);
        x = pooled;
    }
    x = block_forward_eval(store, "bott", &x, cfg.residual)?;
    for i in (0..cfg.depth).rev() {
        let u = match cfg.upsample {
            Upsample::Transposed => {
                deconv2x2_forward(&x, store.get(&format!("up{i}.deconv.w"))?)
            }
            Upsample::Nearest => conv2d_forward(
                &upsample_nearest2_forward(&x),
                store.get(&format!("up{i}.conv.w"))?,
            ),
        };
        let y = relu_forward(&bn_eval_step(store, &format!("up{i}.bnu"), &u)?);
        let cat = concat_channels(&y, &skips[i]);
        x = block_forward_eval(store, &format!("dec{i}"), &cat, cfg.residual)?;
    }
    let mut logits = conv2d_forward(&x, store.get("final.w")?);
    bias_add_forward(&mut logits, store.get("final.b")?);
    Ok(logits)
}

/// Backward pass over a train-mode cache. Returns gradients for every
/// trainable parameter; no parameter in `store` is mutated.
pub fn backward(
    cfg: &NetConfig,
    store: &TensorStore,
    cache: &ForwardCache,
    grad_logits: &Tensor4,
) -> Result<TensorStore, TinynetError> {
    let mut grads = TensorStore::new();
    // Final 1x1 conv.
    let (mut g, g_final_w) = conv2d_backward(&cache.final_in, store.get("final.w")?, grad_logits);
    grads.insert("final.w", g_final_w);
    grads.insert("final.b", bias_backward(grad_logits));

    // Decoder, reverse execution order: dec0, up0, dec1, up1, ...
    let mut skip_grads: Vec<Option<Tensor4>> = (0..cfg.depth).map(|_| None).collect();
    for ((i, dec_cache), (iu, up_cache)) in cache.decs.iter().rev().zip(cache.ups.iter().rev()) {
        debug_assert_eq!(i, iu);
        let g_cat = block_backward(store, &format!("dec{i}"), dec_cache, &g, &mut grads)?;
        let c_up = cfg.up_channels(*i).1;
        let c_skip = cfg.enc_channels(*i).1;
        let (g_up_out, g_skip) = concat_backward(&g_cat, c_up, c_skip);
        skip_grads[*i] = Some(g_skip);
        // Up stage: relu -> bn -> (deconv | nearest+conv).
        let g_b = relu_backward(&up_cache.y, &g_up_out);
        let gamma = store.get(&format!("up{i}.bnu.gamma"))?;
        let (g_u, g_gamma, g_beta) = bn_backward(&up_cache.bnu, gamma, &g_b);
        grads.insert(format!("up{i}.bnu.gamma"), g_gamma);
        grads.insert(format!("up{i}.bnu.beta"), g_beta);
        g = match cfg.upsample {
            Upsample::Transposed => {
                let w = store.get(&format!("up{i}.deconv.w"))?;
                let (g_x, g_w) = deconv2x2_backward(&up_cache.x_in, w, &g_u);
                grads.insert(format!("up{i}.deconv.w"), g_w);
                g_x
            }
            Upsample::Nearest => {
                let w = store.get(&format!("up{i}.conv.w"))?;
                let u0 = up_cache.upsampled.as_ref().expect("nearest cache");
                let (g_u0, g_w) = conv2d_backward(u0, w, &g_u);
                grads.insert(format!("up{i}.conv.w"), g_w);
                upsample_nearest2_backward(&g_u0)
            }
        };
    }

    g = block_backward(store, "bott", &cache.bott, &g, &mut grads)?;

    for i in (0..cfg.depth).rev() {
        let mut g_enc_out = maxpool2_backward(&cache.pools[i], &g);
        g_enc_out.add_assign(skip_grads[i].as_ref().expect("skip grad"));
        g = block_backward(store, &format!("enc{i}"), &cache.enc[i], &g_enc_out, &mut grads)?;
    }
    debug_assert_eq!(g.shape(), cache.batch_shape);
    Ok(grads)
}

/// Argmax over the class axis, per batch item, as label planes. Ties pick
/// the lowest class index.
pub fn logits_to_labels(logits: &Tensor4) -> Vec<LabelPlane> {
    let (n, c, h, w) = logits.shape();
    debug_assert!(c <= u8::MAX as usize);
    let hw = h * w;
    (0..n)
        .map(|ni| {
            let mut values = vec![0u8; hw];
            for (p, out) in values.iter_mut().enumerate() {
                let mut best = 0usize;
                let mut best_v = logits.data[(ni * c) * hw + p];
                for ch in 1..c {
                    let v = logits.data[(ni * c + ch) * hw + p];
                    if v > best_v {
                        best_v = v;
                        best = ch;
                    }
                }
                *out = best as u8;
            }
            LabelPlane::new(h, w, values).expect("dims consistent")
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_shape_contract() {
        let cfg = NetConfig {
            depth: 2,
            base_channels: 2,
            ..Default::default()
        };
        let mut store = init_params(&cfg, 1);
        let batch = Tensor4::zeros(2, 1, 16, 16);
        let (logits, _) = forward_train(&cfg, &mut store, &batch).unwrap();
        assert_eq!(logits.shape(), (2, 3, 16, 16));
    }

    #[test]
    fn eval_forward_is_bit_deterministic() {
        let cfg = NetConfig {
            depth: 2,
            base_channels: 2,
            ..Default::default()
        };
        let store = init_params(&cfg, 7);
        let data: Vec<f64> = (0..256).map(|i| (i as f64 * 0.7).sin() * 0.5 + 0.5).collect();
        let batch = Tensor4::from_vec(1, 1, 16, 16, data).unwrap();
        let a = forward_eval(&cfg, &store, &batch).unwrap();
        let b = forward_eval(&cfg, &store, &batch).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn residual_flag_preserves_output_shape() {
        for residual in [false, true] {
            let cfg = NetConfig {
                depth: 2,
                base_channels: 2,
                residual,
                ..Default::default()
            };
            let store = init_params(&cfg, 3);
            let batch = Tensor4::zeros(1, 1, 8, 8);
            let logits = forward_eval(&cfg, &store, &batch).unwrap();
            assert_eq!(logits.shape(), (1, 3, 8, 8));
        }
    }

    #[test]
    fn nearest_upsampling_variant_runs() {
        let cfg = NetConfig {
            depth: 2,
            base_channels: 2,
            upsample: Upsample::Nearest,
            ..Default::default()
        };
        let mut store = init_params(&cfg, 3);
        let batch = Tensor4::zeros(1, 1, 8, 8);
        let (logits, cache) = forward_train(&cfg, &mut store, &batch).unwrap();
        assert_eq!(logits.shape(), (1, 3, 8, 8));
        let grads = backward(&cfg, &store, &cache, &Tensor4::zeros(1, 3, 8, 8)).unwrap();
        assert!(grads.contains("up0.conv.w"));
    }

    #[test]
    fn bad_batch_shapes_rejected() {
        let cfg = NetConfig::default();
        let store = init_params(&cfg, 1);
        // 20 is not divisible by 2^3.
        assert!(matches!(
            forward_eval(&cfg, &store, &Tensor4::zeros(1, 1, 20, 20)),
            Err(TinynetError::BadInput(_))
        ));
        assert!(matches!(
            forward_eval(&cfg, &store, &Tensor4::zeros(1, 2, 16, 16)),
            Err(TinynetError::BadInput(_))
        ));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_parameter_gradients() {
        let cfg = NetConfig {
            depth: 1,
            base_channels: 2,
            ..Default::default()
        };
        let mut store = init_params(&cfg, 5);
        let data: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).cos() * 0.5 + 0.5).collect();
        let batch = Tensor4::from_vec(1, 1, 8, 8, data).unwrap();
        let (logits, cache) = forward_train(&cfg, &mut store, &batch).unwrap();
        let zero = Tensor4::zeros(logits.n, logits.c, logits.h, logits.w);
        let grads = backward(&cfg, &store, &cache, &zero).unwrap();
        for (name, g) in grads.iter() {
            assert!(
                g.data.iter().all(|&v| v == 0.0),
                "{name} has nonzero gradient under zero upstream"
            );
        }
    }

    #[test]
    fn doubling_upstream_gradient_doubles_parameter_gradients() {
        let cfg = NetConfig {
            depth: 1,
            base_channels: 2,
            residual: true,
            ..Default::default()
        };
        let mut store = init_params(&cfg, 11);
        let data: Vec<f64> = (0..64).map(|i| ((i * 37 % 64) as f64) / 64.0).collect();
        let batch = Tensor4::from_vec(1, 1, 8, 8, data).unwrap();
        let (logits, cache) = forward_train(&cfg, &mut store, &batch).unwrap();
        let g1 = Tensor4::from_vec(
            logits.n,
            logits.c,
            logits.h,
            logits.w,
            (0..logits.len()).map(|i| ((i % 13) as f64 - 6.0) / 13.0).collect(),
        )
        .unwrap();
        let mut g2 = g1.clone();
        g2.scale(2.0);
        let grads1 = backward(&cfg, &store, &cache, &g1).unwrap();
        let grads2 = backward(&cfg, &store, &cache, &g2).unwrap();
        for (name, a) in grads1.iter() {
            let b = grads2.get(name).unwrap();
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!(
                    (2.0 * x - y).abs() <= 1e-12 * y.abs().max(1.0),
                    "{name}: {x} vs {y}"
                );
            }
        }
    }

    #[test]
    fn gradients_cover_every_trainable_parameter() {
        for residual in [false, true] {
            let cfg = NetConfig {
                depth: 2,
                base_channels: 2,
                residual,
                ..Default::default()
            };
            let mut store = init_params(&cfg, 2);
            let data: Vec<f64> = (0..256).map(|i| ((i * 29 % 97) as f64) / 97.0).collect();
            let batch = Tensor4::from_vec(1, 1, 16, 16, data).unwrap();
            let (logits, cache) = forward_train(&cfg, &mut store, &batch).unwrap();
            let g = Tensor4::from_vec(
                logits.n,
                logits.c,
                logits.h,
                logits.w,
                (0..logits.len()).map(|i| ((i % 7) as f64 - 3.0) / 7.0).collect(),
            )
            .unwrap();
            let grads = backward(&cfg, &store, &cache, &g).unwrap();
            for name in cfg.trainable_names() {
                assert!(grads.contains(&name), "missing gradient for {name}");
            }
            assert_eq!(grads.len(), cfg.trainable_names().len());
        }
    }

    #[test]
    fn store_round_trip_preserves_momentum_and_stats() {
        let cfg = NetConfig {
            depth: 1,
            base_channels: 2,
            ..Default::default()
        };
        let mut store = init_params(&cfg, 5);
        let data: Vec<f64> = (0..64).map(|i| (i as f64).fract()).collect();
        let batch = Tensor4::from_vec(1, 1, 8, 8, data).unwrap();
        let labels = LabelBatch::new(1, 8, 8, vec![1; 64]);
        let (logits, cache) = forward_train(&cfg, &mut store, &batch).unwrap();
        let (_, grad) = loss_softmax_ce(&logits, &labels).unwrap();
        let grads = backward(&cfg, &store, &cache, &grad).unwrap();
        sgd_momentum_step(&mut store, &grads, 0.05, 0.9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.tnet");
        save_weights(&store, &path).unwrap();
        let loaded = load_weights(&path).unwrap();
        assert_eq!(loaded, store);
        assert!(loaded.contains("v.final.w"), "momentum buffers persist");
    }

    #[test]
    fn depth_mismatch_detected_by_validation() {
        let cfg3 = NetConfig::default();
        let store3 = init_params(&cfg3, 1);
        let cfg2 = NetConfig {
            depth: 2,
            ..Default::default()
        };
        // A depth-3 store contains everything depth-2 needs except the right
        // dec0 input channels; validation must fail on some tensor.
        assert!(cfg2.validate_store(&store3).is_err());
        // And the inferred config round-trips.
        assert_eq!(NetConfig::infer_from_store(&store3).unwrap(), cfg3);
    }

    #[test]
    fn config_inference_covers_variants() {
        for residual in [false, true] {
            for upsample in [Upsample::Transposed, Upsample::Nearest] {
                let cfg = NetConfig {
                    depth: 2,
                    base_channels: 4,
                    residual,
                    upsample,
                    ..Default::default()
                };
                let store = init_params(&cfg, 9);
                assert_eq!(NetConfig::infer_from_store(&store).unwrap(), cfg);
            }
        }
    }

    #[test]
    fn logits_argmax_is_deterministic() {
        let logits = Tensor4::from_vec(
            1,
            3,
            1,
            2,
            vec![1.0, 0.0, 1.0, 2.0, 1.0, 2.0], // pixel 0: tie between c0/c1... c2
            // layout: c0 = [1,0], c1 = [1,2], c2 = [1,2]
        )
        .unwrap();
        let planes = logits_to_labels(&logits);
        // Pixel 0: all classes tie at 1.0; lowest index wins.
        assert_eq!(planes[0].values[0], 0);
        // Pixel 1: classes 1 and 2 tie at 2.0; class 1 wins.
        assert_eq!(planes[0].values[1], 1);
    }
}
