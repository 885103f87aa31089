//! Reverse-mode gradients and the SGD training loop.
//!
//! One iteration: sample the per-expert batches, run the trunk once per
//! distinct image, pool and score every RoI through its expert head, then
//! push loss gradients back through the same path. Gradients live in a map
//! keyed by layer name so batches for different experts can accumulate into
//! shared layers.

use std::collections::{BTreeMap, BTreeSet};
use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::dataset::Image;
use crate::labeling::{make_training_iteration, ExpertBatch, LabeledPool, RoiLabel};
use crate::network::ops::{
    self, Tensor3,
};
use crate::network::{
    compute_loss, init_network, target_vec, HeadCache, LossBreakdown, NetConfig, Network,
    RoiOutput,
};
use crate::geometry::smooth_l1_grad;
use crate::util::rng_for;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub base_lr: f64,
    /// Learning rate is multiplied by this once `lr_drop_iteration` is
    /// reached.
    pub lr_drop_factor: f64,
    pub lr_drop_iteration: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            base_lr: 0.02,
            lr_drop_factor: 0.1,
            lr_drop_iteration: 1500,
            weight_decay: 5e-4,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::InvalidConfig("base_lr must be positive".into()));
        }
        if !(self.lr_drop_factor.is_finite() && self.lr_drop_factor > 0.0) {
            return Err(Error::InvalidConfig("lr_drop_factor must be positive".into()));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::InvalidConfig("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// Step schedule: the base rate until the drop iteration, scaled after.
pub fn learning_rate(cfg: &TrainConfig, iteration: usize) -> f64 {
    if iteration >= cfg.lr_drop_iteration {
        cfg.base_lr * cfg.lr_drop_factor
    } else {
        cfg.base_lr
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LayerGrads {
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Parameter gradients keyed by layer name.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGrads {
    pub by_layer: BTreeMap<String, LayerGrads>,
}

impl NetGrads {
    pub fn zeros_like(net: &Network) -> NetGrads {
        let by_layer = net
            .layers()
            .into_iter()
            .map(|l| {
                (
                    l.spec.name.clone(),
                    LayerGrads {
                        w: vec![0.0; l.w.len()],
                        b: vec![0.0; l.b.len()],
                    },
                )
            })
            .collect();
        NetGrads { by_layer }
    }

    pub fn get(&self, name: &str) -> &LayerGrads {
        &self.by_layer[name]
    }

    fn add(&mut self, name: &str, gw: &[f64], gb: &[f64]) {
        let lg = self
            .by_layer
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown layer `{name}`"));
        for (a, g) in lg.w.iter_mut().zip(gw) {
            *a += g;
        }
        for (a, g) in lg.b.iter_mut().zip(gb) {
            *a += g;
        }
    }
}

struct TrunkCache {
    relu1: Rc<Tensor3>,
    relu2: Tensor3,
}

struct RoiCache {
    pooled: Vec<f64>,
    argmax: Vec<usize>,
    head: HeadCache,
}

/// Activations for one iteration, kept for the backward pass.
pub struct TrainForward {
    /// Per batch, per RoI, aligned with the batches that produced them.
    pub outputs: Vec<Vec<RoiOutput>>,
    caches: Vec<Vec<RoiCache>>,
    trunks: BTreeMap<String, TrunkCache>,
}

/// Run the trunk and expert heads over every RoI in `batches`.
///
/// `relu1_cache` holds first-stage activations keyed by image id; it is
/// consulted and filled only while conv1 is frozen (the activations cannot
/// go stale then). Pass a fresh map when training conv1.
pub fn forward_training(
    net: &Network,
    images: &BTreeMap<String, Image>,
    batches: &[ExpertBatch],
    relu1_cache: &mut BTreeMap<String, Rc<Tensor3>>,
) -> Result<TrainForward> {
    let ids: BTreeSet<&String> = batches.iter().flat_map(|b| b.image_ids.iter()).collect();
    let mut trunks = BTreeMap::new();
    for id in ids {
        let img = images
            .get(id)
            .ok_or_else(|| Error::Data(format!("batch references unknown image `{id}`")))?;
        let relu1 = if net.conv1.spec.frozen {
            match relu1_cache.get(id) {
                Some(r) => Rc::clone(r),
                None => {
                    let r = Rc::new(net.trunk_stage1(img)?);
                    relu1_cache.insert(id.clone(), Rc::clone(&r));
                    r
                }
            }
        } else {
            Rc::new(net.trunk_stage1(img)?)
        };
        let relu2 = net.trunk_stage2(&relu1);
        trunks.insert(id.clone(), TrunkCache { relu1, relu2 });
    }
    let scale = 1.0 / net.config.feature_stride();
    let mut outputs = Vec::with_capacity(batches.len());
    let mut caches = Vec::with_capacity(batches.len());
    for batch in batches {
        let mut batch_out = Vec::with_capacity(batch.rois.len());
        let mut batch_cache = Vec::with_capacity(batch.rois.len());
        for roi in &batch.rois {
            net.check_roi(&roi.bbox)?;
            let trunk = trunks
                .get(&roi.image_id)
                .ok_or_else(|| Error::Data(format!("RoI references image `{}` outside the batch pair", roi.image_id)))?;
            let (pooled, argmax) =
                ops::roi_max_pool(&trunk.relu2, &roi.bbox, scale, net.config.pool_size);
            let head = net.head_forward(batch.expert, &pooled);
            batch_out.push(RoiOutput {
                probs: head.probs.clone(),
                deltas: head.deltas.clone(),
            });
            batch_cache.push(RoiCache {
                pooled,
                argmax,
                head,
            });
        }
        outputs.push(batch_out);
        caches.push(batch_cache);
    }
    Ok(TrainForward {
        outputs,
        caches,
        trunks,
    })
}

/// Gradients of the full loss (data terms plus weight decay) with respect
/// to every trainable parameter. Frozen layers keep zero gradients.
pub fn backward(
    net: &Network,
    images: &BTreeMap<String, Image>,
    batches: &[ExpertBatch],
    fwd: &TrainForward,
    weight_decay: f64,
) -> Result<NetGrads> {
    let mut grads = NetGrads::zeros_like(net);
    let mut fm_grads: BTreeMap<&String, Tensor3> = fwd
        .trunks
        .iter()
        .map(|(id, t)| (id, Tensor3::zeros(t.relu2.c, t.relu2.h, t.relu2.w)))
        .collect();
    for (batch, batch_cache) in batches.iter().zip(&fwd.caches) {
        let e = batch.expert;
        let head = net.head(e);
        let s1 = net.stage1(e);
        let s2 = net.stage2(e);
        let n = batch.rois.len() as f64;
        let n_pos = batch.positives().max(1) as f64;
        for (roi, cache) in batch.rois.iter().zip(batch_cache) {
            // Softmax + cross-entropy collapse to probs minus one-hot.
            let mut dlogits = cache.head.probs.clone();
            let label_class = match &roi.label {
                RoiLabel::Object { class, .. } => *class,
                RoiLabel::Background => 0,
                RoiLabel::Excluded => unreachable!("sampler never emits excluded RoIs"),
            };
            dlogits[label_class] -= 1.0;
            for g in &mut dlogits {
                *g /= n;
            }
            let (gw, gb, gx_cls) = ops::fc_backward(&cache.head.stage2_out, &head.cls.w, &dlogits);
            grads.add(&head.cls.spec.name, &gw, &gb);
            let mut dstage2 = gx_cls;

            if let RoiLabel::Object { class, target } = &roi.label {
                let tv = target_vec(&net.config, target);
                let mut ddeltas = vec![0.0; net.config.bbox_dim()];
                let group = (*class - 1) * 4;
                for j in 0..4 {
                    ddeltas[group + j] =
                        smooth_l1_grad(cache.head.deltas[group + j] - tv[j]) / n_pos;
                }
                let (gw, gb, gx_bbox) =
                    ops::fc_backward(&cache.head.stage2_out, &head.bbox.w, &ddeltas);
                grads.add(&head.bbox.spec.name, &gw, &gb);
                for (a, g) in dstage2.iter_mut().zip(&gx_bbox) {
                    *a += g;
                }
            }

            ops::relu_vec_backward(&cache.head.stage2_out, &mut dstage2);
            let (gw, gb, mut dstage1) = ops::fc_backward(&cache.head.stage1_out, &s2.w, &dstage2);
            grads.add(&s2.spec.name, &gw, &gb);
            ops::relu_vec_backward(&cache.head.stage1_out, &mut dstage1);
            let (gw, gb, dpooled) = ops::fc_backward(&cache.pooled, &s1.w, &dstage1);
            grads.add(&s1.spec.name, &gw, &gb);
            let fm = fm_grads
                .get_mut(&roi.image_id)
                .expect("forward pass covered every batch image");
            ops::roi_max_pool_backward(&cache.argmax, &dpooled, fm);
        }
    }

    let conv1_shape = net.config.conv1_shape();
    let conv2_shape = net.config.conv2_shape();
    for (id, mut g2) in fm_grads {
        let trunk = &fwd.trunks[id];
        ops::relu_backward(&trunk.relu2, &mut g2);
        let want_input = !net.conv1.spec.frozen;
        let (gw, gb, gx) =
            ops::conv2d_backward(&trunk.relu1, &net.conv2.w, &conv2_shape, &g2, want_input);
        grads.add("conv2", &gw, &gb);
        if let Some(mut g1) = gx {
            ops::relu_backward(&trunk.relu1, &mut g1);
            let img = images
                .get(id)
                .ok_or_else(|| Error::Data(format!("batch references unknown image `{id}`")))?;
            let input = net.image_to_tensor(img)?;
            let (gw, gb, _) = ops::conv2d_backward(&input, &net.conv1.w, &conv1_shape, &g1, false);
            grads.add("conv1", &gw, &gb);
        }
    }

    if weight_decay != 0.0 {
        for layer in net.layers() {
            if layer.spec.frozen {
                continue;
            }
            let lg = grads.by_layer.get_mut(&layer.spec.name).expect("aligned");
            for (g, w) in lg.w.iter_mut().zip(&layer.w) {
                *g += weight_decay * w;
            }
            for (g, b) in lg.b.iter_mut().zip(&layer.b) {
                *g += weight_decay * b;
            }
        }
    }
    Ok(grads)
}

/// One plain SGD step. Frozen layers are untouched; everything else moves
/// by `lr * layer_multiplier * grad`.
pub fn sgd_step(net: &mut Network, grads: &NetGrads, lr: f64) {
    for layer in net.layers_mut() {
        if layer.spec.frozen {
            continue;
        }
        let lg = grads
            .by_layer
            .get(&layer.spec.name)
            .unwrap_or_else(|| panic!("missing gradients for `{}`", layer.spec.name));
        let step = lr * layer.spec.lr_multiplier;
        for (w, g) in layer.w.iter_mut().zip(&lg.w) {
            *w -= step * g;
        }
        for (b, g) in layer.b.iter_mut().zip(&lg.b) {
            *b -= step * g;
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iteration: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

/// Full training run: init from `train/init`, sample batches from
/// `train/sample`, step every iteration, and log every iteration's loss.
pub fn train(
    images: &BTreeMap<String, Image>,
    pool: &LabeledPool,
    net_cfg: &NetConfig,
    cfg: &TrainConfig,
) -> Result<(Network, Vec<LogRow>)> {
    cfg.validate()?;
    let mut net = init_network(net_cfg, &mut rng_for(cfg.seed, "train/init"))?;
    let mut rng = rng_for(cfg.seed, "train/sample");
    let mut relu1_cache = BTreeMap::new();
    let mut log = Vec::with_capacity(cfg.iterations);
    for iteration in 0..cfg.iterations {
        let batches = make_training_iteration(pool, net.config.routing, &mut rng)?;
        let fwd = forward_training(&net, images, &batches, &mut relu1_cache)?;
        let loss = compute_loss(&net, &fwd.outputs, &batches, cfg.weight_decay);
        let grads = backward(&net, images, &batches, &fwd, cfg.weight_decay)?;
        let lr = learning_rate(cfg, iteration);
        sgd_step(&mut net, &grads, lr);
        log.push(LogRow {
            iteration,
            lr,
            loss,
        });
    }
    Ok((net, log))
}
