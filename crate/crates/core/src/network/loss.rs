//! Multi-batch training loss.
//!
//! Each iteration scores one batch per active expert. Per batch the loss is
//! a cross-entropy term averaged over every RoI plus a smooth-L1 box term
//! averaged over the positive RoIs only (each positive contributes the sum
//! over its matched class's four delta slots). A single weight-decay term
//! `wd * 0.5 * sum(p^2)` over trainable parameters is added once. The total
//! is the plain sum of all components.

use serde::{Deserialize, Serialize};

use crate::geometry::smooth_l1;
use crate::labeling::{ExpertBatch, RoiLabel};
use crate::network::{target_vec, Network, RoiOutput};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Cross-entropy per expert, indexed H, S, V. Zero for experts without a
    /// batch this iteration.
    pub softmax: [f64; 3],
    /// Box regression per expert, indexed H, S, V.
    pub smooth: [f64; 3],
    pub reg: f64,
    pub total: f64,
}

/// `wd * 0.5 * ||params||^2` over trainable layers (weights and biases).
pub fn regularization_term(net: &Network, weight_decay: f64) -> f64 {
    let mut sq = 0.0;
    for layer in net.layers() {
        if layer.spec.frozen {
            continue;
        }
        sq += layer.w.iter().map(|w| w * w).sum::<f64>();
        sq += layer.b.iter().map(|b| b * b).sum::<f64>();
    }
    weight_decay * 0.5 * sq
}

/// Loss over one iteration's batches. `outputs[i]` must align with
/// `batches[i].rois`.
pub fn compute_loss(
    net: &Network,
    outputs: &[Vec<RoiOutput>],
    batches: &[ExpertBatch],
    weight_decay: f64,
) -> LossBreakdown {
    assert_eq!(outputs.len(), batches.len(), "one output set per batch");
    let mut softmax = [0.0; 3];
    let mut smooth = [0.0; 3];
    for (outs, batch) in outputs.iter().zip(batches) {
        assert_eq!(outs.len(), batch.rois.len(), "one output per RoI");
        let e = batch.expert.index();
        let n = batch.rois.len() as f64;
        let n_pos = batch.positives().max(1) as f64;
        for (out, roi) in outs.iter().zip(&batch.rois) {
            match &roi.label {
                RoiLabel::Object { class, target } => {
                    softmax[e] += -out.probs[*class].max(f64::MIN_POSITIVE).ln() / n;
                    let tv = target_vec(&net.config, target);
                    let group = (*class - 1) * 4;
                    for j in 0..4 {
                        smooth[e] += smooth_l1(out.deltas[group + j] - tv[j]) / n_pos;
                    }
                }
                RoiLabel::Background => {
                    softmax[e] += -out.probs[0].max(f64::MIN_POSITIVE).ln() / n;
                }
                RoiLabel::Excluded => unreachable!("sampler never emits excluded RoIs"),
            }
        }
    }
    let reg = regularization_term(net, weight_decay);
    let total = reg + softmax.iter().sum::<f64>() + smooth.iter().sum::<f64>();
    LossBreakdown {
        softmax,
        smooth,
        reg,
        total,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{BBox, RegressionTarget};
    use crate::labeling::LabeledRoi;
    use crate::network::{NetConfig, Network, SharedFc};
    use crate::router::{ExpertId, ExpertSet};

    fn test_net() -> Network {
        Network::build(&NetConfig {
            input_w: 8,
            input_h: 8,
            conv1_channels: 2,
            conv2_channels: 2,
            pool_size: 2,
            fc_width: 4,
            num_classes: 3,
            ..Default::default()
        })
        .unwrap()
    }

    fn roi(label: RoiLabel) -> LabeledRoi {
        LabeledRoi {
            image_id: "img".into(),
            bbox: BBox::new(0.0, 0.0, 4.0, 4.0).unwrap(),
            max_iou: 0.0,
            label,
            train_experts: ExpertSet::from_iter([ExpertId::S]),
        }
    }

    fn zero_target() -> RegressionTarget {
        RegressionTarget {
            tx: 0.0,
            ty: 0.0,
            tw: 0.0,
            th: 0.0,
        }
    }

    #[test]
    fn perfect_predictions_give_zero_loss() {
        let net = test_net();
        let batch = ExpertBatch {
            expert: ExpertId::S,
            image_ids: ["img".into(), "img2".into()],
            rois: vec![
                roi(RoiLabel::Object {
                    class: 2,
                    target: zero_target(),
                }),
                roi(RoiLabel::Background),
            ],
        };
        let outputs = vec![vec![
            RoiOutput {
                probs: vec![0.0, 0.0, 1.0, 0.0],
                deltas: vec![0.0; 12],
            },
            RoiOutput {
                probs: vec![1.0, 0.0, 0.0, 0.0],
                deltas: vec![0.0; 12],
            },
        ]];
        let loss = compute_loss(&net, &outputs, &[batch], 0.0);
        assert_eq!(loss.total, 0.0);
        assert_eq!(loss.softmax, [0.0; 3]);
        assert_eq!(loss.smooth, [0.0; 3]);
    }

    #[test]
    fn uniform_probs_give_ln_num_outputs() {
        let net = test_net();
        let batch = ExpertBatch {
            expert: ExpertId::H,
            image_ids: ["img".into(), "img2".into()],
            rois: vec![roi(RoiLabel::Background), roi(RoiLabel::Background)],
        };
        let outputs = vec![vec![
            RoiOutput {
                probs: vec![0.25; 4],
                deltas: vec![0.0; 12],
            };
            2
        ]];
        let loss = compute_loss(&net, &outputs, &[batch], 0.0);
        assert!((loss.softmax[0] - 4.0f64.ln()).abs() < 1e-12);
        assert_eq!(loss.smooth[0], 0.0);
        assert!((loss.total - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn smooth_term_averages_over_positives_only() {
        let net = test_net();
        // Two positives with |error| = 0.5 on one slot each, one background.
        // smooth_l1(0.5) = 0.125, mean over 2 positives with 1 slot off
        // each: (0.125 + 0.125) / 2.
        let target = zero_target();
        let batch = ExpertBatch {
            expert: ExpertId::V,
            image_ids: ["img".into(), "img2".into()],
            rois: vec![
                roi(RoiLabel::Object { class: 1, target }),
                roi(RoiLabel::Object { class: 3, target }),
                roi(RoiLabel::Background),
            ],
        };
        let mut d1 = vec![0.0; 12];
        d1[0] = 0.5; // class 1, slot tx
        let mut d2 = vec![0.0; 12];
        d2[11] = -0.5; // class 3, slot th
        let outputs = vec![vec![
            RoiOutput {
                probs: vec![0.0, 1.0, 0.0, 0.0],
                deltas: d1,
            },
            RoiOutput {
                probs: vec![0.0, 0.0, 0.0, 1.0],
                deltas: d2,
            },
            RoiOutput {
                probs: vec![1.0, 0.0, 0.0, 0.0],
                deltas: vec![0.7; 12], // background deltas never scored
            },
        ]];
        let loss = compute_loss(&net, &outputs, &[batch], 0.0);
        assert!((loss.smooth[2] - 0.125).abs() < 1e-12);
        assert_eq!(loss.softmax[2], 0.0);
    }

    #[test]
    fn off_class_delta_slots_are_ignored() {
        let net = test_net();
        let batch = ExpertBatch {
            expert: ExpertId::S,
            image_ids: ["img".into(), "img2".into()],
            rois: vec![roi(RoiLabel::Object {
                class: 2,
                target: zero_target(),
            })],
        };
        let mut deltas = vec![9.0; 12];
        deltas[4..8].fill(0.0); // class 2 owns slots 4..8
        let outputs = vec![vec![RoiOutput {
            probs: vec![0.0, 0.0, 1.0, 0.0],
            deltas,
        }]];
        let loss = compute_loss(&net, &outputs, &[batch], 0.0);
        assert_eq!(loss.smooth[1], 0.0);
    }

    #[test]
    fn regularization_skips_frozen_layers() {
        let mut net = test_net();
        for w in &mut net.layer_mut("conv1").unwrap().w {
            *w = 100.0; // frozen, must not contribute
        }
        for w in &mut net.layer_mut("conv2").unwrap().w {
            *w = 2.0;
        }
        let n = net.layer("conv2").unwrap().w.len() as f64;
        let reg = regularization_term(&net, 0.1);
        assert!((reg - 0.1 * 0.5 * n * 4.0).abs() < 1e-9);
    }

    #[test]
    fn total_is_sum_of_components() {
        let mut net = test_net();
        for w in &mut net.layer_mut("expert_H.cls").unwrap().w {
            *w = 0.5;
        }
        let batch = ExpertBatch {
            expert: ExpertId::H,
            image_ids: ["img".into(), "img2".into()],
            rois: vec![roi(RoiLabel::Object {
                class: 1,
                target: zero_target(),
            })],
        };
        let mut deltas = vec![0.0; 12];
        deltas[1] = 2.0;
        let outputs = vec![vec![RoiOutput {
            probs: vec![0.2, 0.5, 0.2, 0.1],
            deltas,
        }]];
        let loss = compute_loss(&net, &outputs, &[batch], 0.01);
        let expect = loss.softmax.iter().sum::<f64>() + loss.smooth.iter().sum::<f64>() + loss.reg;
        assert!((loss.total - expect).abs() < 1e-12);
        assert!(loss.reg > 0.0);
        assert!((loss.softmax[0] - -(0.5f64.ln())).abs() < 1e-12);
        assert!((loss.smooth[0] - 1.5).abs() < 1e-12); // smooth_l1(2) = 1.5
    }

    #[test]
    fn sharing_mode_changes_param_count_not_loss_shape() {
        // Regularization over a fc6fc7-shared net counts fewer parameters
        // than over an unshared one at equal weights.
        let mk = |mode| {
            let mut net = Network::build(&NetConfig {
                input_w: 8,
                input_h: 8,
                conv1_channels: 2,
                conv2_channels: 2,
                pool_size: 2,
                fc_width: 4,
                num_classes: 3,
                shared_fc: mode,
                ..Default::default()
            })
            .unwrap();
            for layer in net.layers_mut() {
                layer.w.fill(1.0);
            }
            regularization_term(&net, 1.0)
        };
        let none = mk(SharedFc::None);
        let fc6 = mk(SharedFc::Fc6);
        let both = mk(SharedFc::Fc6Fc7);
        assert!(none > fc6 && fc6 > both);
    }
}
