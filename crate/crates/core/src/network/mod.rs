//! The detection network: a small shared convolutional trunk, RoI max
//! pooling, and three expert-specific fully connected heads, each ending in
//! sibling class-softmax and per-class box-regression outputs.
//!
//! Architecture (all convs 3x3, stride 2, pad 1):
//!
//! ```text
//! image -> conv1+relu (frozen) -> conv2+relu -> roi max pool (P x P)
//!       -> fc stage 1 -> fc stage 2 -> [cls softmax | bbox deltas]   (x3 experts)
//! ```
//!
//! The two fc stages can be shared across experts: `fc6` sharing (the
//! default) makes stage 1 common; `fc6_fc7` shares both; `none` gives every
//! expert its own pair. Trunk and shared fc layers use a 1/3 learning-rate
//! multiplier under three-expert routing, since all three batch streams push
//! gradient into them each iteration.

pub mod io;
pub mod loss;
pub mod ops;
pub mod train;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Image;
use crate::geometry::{BBox, RegressionTarget};
use crate::router::{ExpertId, RoutingPolicy};
use crate::{Error, Result};

use ops::{ConvShape, Tensor3};

pub use io::{
    load_weights, load_weights_expecting, read_train_log, save_weights, write_train_log,
};
pub use loss::{compute_loss, regularization_term, LossBreakdown};
pub use train::{
    backward, forward_training, learning_rate, sgd_step, train, LogRow, NetGrads, TrainConfig,
    TrainForward,
};

/// Which fc stages the experts share.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharedFc {
    None,
    Fc6,
    Fc6Fc7,
}

impl std::str::FromStr for SharedFc {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "none" => Ok(SharedFc::None),
            "fc6" => Ok(SharedFc::Fc6),
            "fc6fc7" | "fc6_fc7" => Ok(SharedFc::Fc6Fc7),
            other => Err(format!(
                "unknown sharing mode `{other}` (expected none, fc6, or fc6fc7)"
            )),
        }
    }
}

/// Initialization scheme for hidden (non-output) layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenInit {
    /// Fan-in scaled Gaussian, std = sqrt(2 / fan_in). Needed when training
    /// from scratch; a fixed small std starves the forward signal.
    He,
    /// Fixed-std Gaussian.
    Gaussian(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_w: u32,
    pub input_h: u32,
    pub conv1_channels: usize,
    pub conv2_channels: usize,
    /// RoI pool output is `pool_size x pool_size` per channel.
    pub pool_size: usize,
    pub fc_width: usize,
    /// Object classes; outputs are `num_classes + 1` scores (background
    /// first) and `4 * num_classes` box deltas.
    pub num_classes: usize,
    pub shared_fc: SharedFc,
    pub routing: RoutingPolicy,
    pub freeze_conv1: bool,
    pub hidden_init: HiddenInit,
    pub cls_init_std: f64,
    pub bbox_init_std: f64,
    /// Divide regression targets by fixed stds during training (and undo at
    /// decode time). Off by default.
    pub normalize_targets: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            input_w: 128,
            input_h: 128,
            conv1_channels: 6,
            conv2_channels: 12,
            pool_size: 4,
            fc_width: 64,
            num_classes: 3,
            shared_fc: SharedFc::Fc6,
            routing: RoutingPolicy::ByShape,
            freeze_conv1: true,
            hidden_init: HiddenInit::He,
            cls_init_std: 0.01,
            bbox_init_std: 0.001,
            normalize_targets: false,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::InvalidConfig("need at least one class".into()));
        }
        if self.pool_size == 0 || self.fc_width == 0 {
            return Err(Error::InvalidConfig(
                "pool_size and fc_width must be positive".into(),
            ));
        }
        if self.conv1_channels == 0 || self.conv2_channels == 0 {
            return Err(Error::InvalidConfig("conv channels must be positive".into()));
        }
        let (fh, fw) = self.feature_hw();
        if fh == 0 || fw == 0 {
            return Err(Error::InvalidConfig(format!(
                "input {}x{} too small for the trunk",
                self.input_w, self.input_h
            )));
        }
        Ok(())
    }

    pub fn conv1_shape(&self) -> ConvShape {
        ConvShape {
            in_c: 1,
            out_c: self.conv1_channels,
            kernel: 3,
            stride: 2,
            pad: 1,
        }
    }

    pub fn conv2_shape(&self) -> ConvShape {
        ConvShape {
            in_c: self.conv1_channels,
            out_c: self.conv2_channels,
            kernel: 3,
            stride: 2,
            pad: 1,
        }
    }

    /// Image-to-feature-map downsampling factor (two stride-2 convs).
    pub fn feature_stride(&self) -> f64 {
        4.0
    }

    pub fn feature_hw(&self) -> (usize, usize) {
        let s1 = self.conv1_shape();
        let s2 = self.conv2_shape();
        let (h1, w1) = s1.out_hw(self.input_h as usize, self.input_w as usize);
        s2.out_hw(h1, w1)
    }

    pub fn pooled_dim(&self) -> usize {
        self.pool_size * self.pool_size * self.conv2_channels
    }

    pub fn cls_dim(&self) -> usize {
        self.num_classes + 1
    }

    pub fn bbox_dim(&self) -> usize {
        4 * self.num_classes
    }

    /// Layer names and weight shapes implied by this config, in storage
    /// order. Used to diff weight files against an expected architecture.
    pub fn blueprint(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = vec![
            (
                "conv1".to_string(),
                vec![self.conv1_channels, 1, 3, 3],
            ),
            (
                "conv2".to_string(),
                vec![self.conv2_channels, self.conv1_channels, 3, 3],
            ),
        ];
        if self.shared_fc != SharedFc::None {
            out.push(("fc_shared".into(), vec![self.fc_width, self.pooled_dim()]));
        }
        if self.shared_fc == SharedFc::Fc6Fc7 {
            out.push(("fc_shared2".into(), vec![self.fc_width, self.fc_width]));
        }
        for e in ExpertId::ALL {
            if self.shared_fc == SharedFc::None {
                out.push((
                    format!("expert_{e}.fc6"),
                    vec![self.fc_width, self.pooled_dim()],
                ));
            }
            if self.shared_fc != SharedFc::Fc6Fc7 {
                out.push((format!("expert_{e}.fc7"), vec![self.fc_width, self.fc_width]));
            }
            out.push((format!("expert_{e}.cls"), vec![self.cls_dim(), self.fc_width]));
            out.push((
                format!("expert_{e}.bbox"),
                vec![self.bbox_dim(), self.fc_width],
            ));
        }
        out
    }
}

/// Fixed stds for optional regression-target normalization.
pub const TARGET_STDS: [f64; 4] = [0.1, 0.1, 0.2, 0.2];

/// Regression target as the 4-vector the network is trained against.
pub fn target_vec(cfg: &NetConfig, t: &RegressionTarget) -> [f64; 4] {
    let raw = [t.tx, t.ty, t.tw, t.th];
    if cfg.normalize_targets {
        [
            raw[0] / TARGET_STDS[0],
            raw[1] / TARGET_STDS[1],
            raw[2] / TARGET_STDS[2],
            raw[3] / TARGET_STDS[3],
        ]
    } else {
        raw
    }
}

/// Network deltas for one class group, mapped back to box-offset units.
pub fn deltas_as_target(cfg: &NetConfig, deltas: &[f64]) -> RegressionTarget {
    let scale = if cfg.normalize_targets {
        TARGET_STDS
    } else {
        [1.0; 4]
    };
    RegressionTarget {
        tx: deltas[0] * scale[0],
        ty: deltas[1] * scale[1],
        tw: deltas[2] * scale[2],
        th: deltas[3] * scale[3],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    Fc,
    RoiPool,
    SoftmaxCls,
    BboxReg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Owner {
    Trunk,
    Shared,
    ExpertH,
    ExpertS,
    ExpertV,
}

impl Owner {
    pub fn expert(e: ExpertId) -> Owner {
        match e {
            ExpertId::H => Owner::ExpertH,
            ExpertId::S => Owner::ExpertS,
            ExpertId::V => Owner::ExpertV,
        }
    }

    pub fn expert_id(self) -> Option<ExpertId> {
        match self {
            Owner::ExpertH => Some(ExpertId::H),
            Owner::ExpertS => Some(ExpertId::S),
            Owner::ExpertV => Some(ExpertId::V),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub owner: Owner,
    pub lr_multiplier: f64,
    pub frozen: bool,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Layer {
    fn zeroed(spec: LayerSpec) -> Layer {
        let w_len: usize = spec.shape.iter().product();
        let b_len = spec.shape[0];
        Layer {
            spec,
            w: vec![0.0; w_len],
            b: vec![0.0; b_len],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpertHead {
    pub fc6: Option<Layer>,
    pub fc7: Option<Layer>,
    pub cls: Layer,
    pub bbox: Layer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: NetConfig,
    pub conv1: Layer,
    pub conv2: Layer,
    pub fc_shared: Option<Layer>,
    pub fc_shared2: Option<Layer>,
    pub experts: [ExpertHead; 3],
}

/// Per-RoI network output: class probabilities (background first) and
/// `4 * num_classes` box deltas.
#[derive(Debug, Clone, PartialEq)]
pub struct RoiOutput {
    pub probs: Vec<f64>,
    pub deltas: Vec<f64>,
}

/// Cached head activations for one RoI, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct HeadCache {
    pub stage1_out: Vec<f64>,
    pub stage2_out: Vec<f64>,
    pub probs: Vec<f64>,
    pub deltas: Vec<f64>,
}

impl Network {
    /// All parameter layers in storage order.
    pub fn layers(&self) -> Vec<&Layer> {
        let mut out = vec![&self.conv1, &self.conv2];
        if let Some(l) = &self.fc_shared {
            out.push(l);
        }
        if let Some(l) = &self.fc_shared2 {
            out.push(l);
        }
        for head in &self.experts {
            if let Some(l) = &head.fc6 {
                out.push(l);
            }
            if let Some(l) = &head.fc7 {
                out.push(l);
            }
            out.push(&head.cls);
            out.push(&head.bbox);
        }
        out
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Layer> {
        let mut out: Vec<&mut Layer> = vec![&mut self.conv1, &mut self.conv2];
        if let Some(l) = self.fc_shared.as_mut() {
            out.push(l);
        }
        if let Some(l) = self.fc_shared2.as_mut() {
            out.push(l);
        }
        for head in &mut self.experts {
            if let Some(l) = head.fc6.as_mut() {
                out.push(l);
            }
            if let Some(l) = head.fc7.as_mut() {
                out.push(l);
            }
            out.push(&mut head.cls);
            out.push(&mut head.bbox);
        }
        out
    }

    pub fn layer(&self, name: &str) -> Option<&Layer> {
        self.layers().into_iter().find(|l| l.spec.name == name)
    }

    pub fn layer_mut(&mut self, name: &str) -> Option<&mut Layer> {
        self.layers_mut().into_iter().find(|l| l.spec.name == name)
    }

    pub fn head(&self, e: ExpertId) -> &ExpertHead {
        &self.experts[e.index()]
    }

    /// Stage-1 fc for an expert: the shared fc6 or the expert's own.
    fn stage1(&self, e: ExpertId) -> &Layer {
        self.fc_shared
            .as_ref()
            .or(self.experts[e.index()].fc6.as_ref())
            .expect("stage-1 fc present by construction")
    }

    fn stage2(&self, e: ExpertId) -> &Layer {
        self.fc_shared2
            .as_ref()
            .or(self.experts[e.index()].fc7.as_ref())
            .expect("stage-2 fc present by construction")
    }

    /// Normalized single-channel input tensor.
    pub fn image_to_tensor(&self, img: &Image) -> Result<Tensor3> {
        if img.w != self.config.input_w || img.h != self.config.input_h {
            return Err(Error::Data(format!(
                "image `{}` is {}x{}, the network expects {}x{}",
                img.id, img.w, img.h, self.config.input_w, self.config.input_h
            )));
        }
        let mut t = Tensor3::zeros(1, img.h as usize, img.w as usize);
        for (dst, src) in t.data.iter_mut().zip(&img.pixels) {
            *dst = f64::from(*src) / 255.0 - 0.5;
        }
        Ok(t)
    }

    /// Trunk up to the first activation. Cacheable while conv1 is frozen.
    pub fn trunk_stage1(&self, img: &Image) -> Result<Tensor3> {
        let input = self.image_to_tensor(img)?;
        let mut r1 = ops::conv2d_forward(&input, &self.conv1.w, &self.conv1.b, &self.config.conv1_shape());
        ops::relu_forward(&mut r1);
        Ok(r1)
    }

    pub fn trunk_stage2(&self, relu1: &Tensor3) -> Tensor3 {
        let mut r2 = ops::conv2d_forward(relu1, &self.conv2.w, &self.conv2.b, &self.config.conv2_shape());
        ops::relu_forward(&mut r2);
        r2
    }

    pub fn head_forward(&self, e: ExpertId, pooled: &[f64]) -> HeadCache {
        let s1 = self.stage1(e);
        let mut stage1_out = ops::fc_forward(pooled, &s1.w, &s1.b);
        ops::relu_vec_forward(&mut stage1_out);
        let s2 = self.stage2(e);
        let mut stage2_out = ops::fc_forward(&stage1_out, &s2.w, &s2.b);
        ops::relu_vec_forward(&mut stage2_out);
        let head = &self.experts[e.index()];
        let logits = ops::fc_forward(&stage2_out, &head.cls.w, &head.cls.b);
        let probs = ops::softmax(&logits);
        let deltas = ops::fc_forward(&stage2_out, &head.bbox.w, &head.bbox.b);
        HeadCache {
            stage1_out,
            stage2_out,
            probs,
            deltas,
        }
    }

    fn check_roi(&self, b: &BBox) -> Result<()> {
        let (w, h) = (f64::from(self.config.input_w), f64::from(self.config.input_h));
        if b.x1() < 0.0 || b.y1() < 0.0 || b.x2() > w || b.y2() > h {
            return Err(Error::Data(format!(
                "RoI {:?} extends outside the {w}x{h} input",
                b.coords()
            )));
        }
        Ok(())
    }

    /// Inference over routed RoIs of one image.
    pub fn forward(&self, img: &Image, rois: &[(BBox, ExpertId)]) -> Result<Vec<RoiOutput>> {
        let relu1 = self.trunk_stage1(img)?;
        let relu2 = self.trunk_stage2(&relu1);
        let scale = 1.0 / self.config.feature_stride();
        let mut out = Vec::with_capacity(rois.len());
        for (bbox, expert) in rois {
            self.check_roi(bbox)?;
            let (pooled, _) = ops::roi_max_pool(&relu2, bbox, scale, self.config.pool_size);
            let head = self.head_forward(*expert, &pooled);
            out.push(RoiOutput {
                probs: head.probs,
                deltas: head.deltas,
            });
        }
        Ok(out)
    }

    /// Construct the layer tree for a config with all parameters zero.
    pub fn build(config: &NetConfig) -> Result<Network> {
        config.validate()?;
        let trunk_mult = match config.routing {
            // Three batch streams hit the trunk/shared layers per iteration.
            RoutingPolicy::ByShape => 1.0 / 3.0,
            RoutingPolicy::SingleExpert => 1.0,
        };
        let conv_spec = |name: &str, shape: Vec<usize>, frozen: bool| LayerSpec {
            name: name.into(),
            kind: LayerKind::Conv,
            owner: Owner::Trunk,
            lr_multiplier: trunk_mult,
            frozen,
            shape,
        };
        let conv1 = Layer::zeroed(conv_spec(
            "conv1",
            vec![config.conv1_channels, 1, 3, 3],
            config.freeze_conv1,
        ));
        let conv2 = Layer::zeroed(conv_spec(
            "conv2",
            vec![config.conv2_channels, config.conv1_channels, 3, 3],
            false,
        ));
        let fc_spec = |name: String, owner: Owner, mult: f64, shape: Vec<usize>| LayerSpec {
            name,
            kind: LayerKind::Fc,
            owner,
            lr_multiplier: mult,
            frozen: false,
            shape,
        };
        let fc_shared = (config.shared_fc != SharedFc::None).then(|| {
            Layer::zeroed(fc_spec(
                "fc_shared".into(),
                Owner::Shared,
                trunk_mult,
                vec![config.fc_width, config.pooled_dim()],
            ))
        });
        let fc_shared2 = (config.shared_fc == SharedFc::Fc6Fc7).then(|| {
            Layer::zeroed(fc_spec(
                "fc_shared2".into(),
                Owner::Shared,
                trunk_mult,
                vec![config.fc_width, config.fc_width],
            ))
        });
        let experts = ExpertId::ALL.map(|e| {
            let owner = Owner::expert(e);
            let fc6 = (config.shared_fc == SharedFc::None).then(|| {
                Layer::zeroed(fc_spec(
                    format!("expert_{e}.fc6"),
                    owner,
                    1.0,
                    vec![config.fc_width, config.pooled_dim()],
                ))
            });
            let fc7 = (config.shared_fc != SharedFc::Fc6Fc7).then(|| {
                Layer::zeroed(fc_spec(
                    format!("expert_{e}.fc7"),
                    owner,
                    1.0,
                    vec![config.fc_width, config.fc_width],
                ))
            });
            let cls = Layer::zeroed(LayerSpec {
                name: format!("expert_{e}.cls"),
                kind: LayerKind::SoftmaxCls,
                owner,
                lr_multiplier: 1.0,
                frozen: false,
                shape: vec![config.cls_dim(), config.fc_width],
            });
            let bbox = Layer::zeroed(LayerSpec {
                name: format!("expert_{e}.bbox"),
                kind: LayerKind::BboxReg,
                owner,
                lr_multiplier: 1.0,
                frozen: false,
                shape: vec![config.bbox_dim(), config.fc_width],
            });
            ExpertHead {
                fc6,
                fc7,
                cls,
                bbox,
            }
        });
        Ok(Network {
            config: config.clone(),
            conv1,
            conv2,
            fc_shared,
            fc_shared2,
            experts,
        })
    }
}

/// Build and randomize a network. Weight draws happen in storage order, so
/// the same seed always yields the same parameters. Output layers use small
/// fixed stds (0.01 for class scores, 0.001 for box deltas); hidden layers
/// follow `config.hidden_init`. All biases start at zero.
pub fn init_network<R: Rng>(config: &NetConfig, rng: &mut R) -> Result<Network> {
    let mut net = Network::build(config)?;
    let cls_std = config.cls_init_std;
    let bbox_std = config.bbox_init_std;
    let hidden = config.hidden_init;
    for layer in net.layers_mut() {
        let fan_in: usize = layer.spec.shape[1..].iter().product();
        let std = match layer.spec.kind {
            LayerKind::SoftmaxCls => cls_std,
            LayerKind::BboxReg => bbox_std,
            _ => match hidden {
                HiddenInit::He => (2.0 / fan_in as f64).sqrt(),
                HiddenInit::Gaussian(s) => s,
            },
        };
        let dist = Normal::new(0.0, std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        for w in &mut layer.w {
            *w = dist.sample(rng);
        }
        // Biases stay zero.
    }
    Ok(net)
}
