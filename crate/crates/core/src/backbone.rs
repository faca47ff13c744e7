//! Per-point feature extractor and the stage-1 seen-class classifier.
//!
//! The encoder is a small neighborhood-pooling network: a per-point MLP,
//! mean pooling over k-nearest neighbors, and a linear post-pool layer to
//! the shared feature dimension. The classifier head is only used during
//! pre-training; inference goes through the prototype space instead.

use std::rc::Rc;

use crate::autodiff::{
    clip_global_norm, softmax_cross_entropy, Adam, MathError, Param, Tape, TensorId,
};
use crate::data::{ClassSplit, SceneSample};
pub use crate::geometry::{knn_indices, local_descriptors};
use crate::rng::Rng;
use crate::trainer::{TrainError, TrainTrace};
use crate::LEAKY_SLOPE;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureOrigin {
    Real,
    Synthetic,
}

/// An NxD block of per-point features with their class labels.
#[derive(Clone, Debug)]
pub struct FeatureSet {
    pub features: Vec<f64>,
    pub n: usize,
    pub dim: usize,
    pub labels: Vec<usize>,
    pub origin: FeatureOrigin,
}

impl FeatureSet {
    pub fn new(
        features: Vec<f64>,
        n: usize,
        dim: usize,
        labels: Vec<usize>,
        origin: FeatureOrigin,
    ) -> FeatureSet {
        assert_eq!(features.len(), n * dim);
        assert_eq!(labels.len(), n);
        FeatureSet {
            features,
            n,
            dim,
            labels,
            origin,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }
}

/// Weights of the encoder plus the seen-class head. `frozen` detaches all
/// tensors from gradients when entered on a tape.
#[derive(Clone, Debug)]
pub struct BackboneParams {
    pub w1: Param,
    pub b1: Param,
    pub w2: Param,
    pub b2: Param,
    pub post_w1: Param,
    pub post_b1: Param,
    pub post_w2: Param,
    pub post_b2: Param,
    pub cls_w: Param,
    pub cls_b: Param,
    pub hidden: usize,
    pub feat_dim: usize,
    pub k: usize,
    pub frozen: bool,
}

pub struct BackboneIds {
    pub w1: TensorId,
    pub b1: TensorId,
    pub w2: TensorId,
    pub b2: TensorId,
    pub post_w1: TensorId,
    pub post_b1: TensorId,
    pub post_w2: TensorId,
    pub post_b2: TensorId,
    pub cls_w: TensorId,
    pub cls_b: TensorId,
}

impl BackboneParams {
    pub fn init(
        hidden: usize,
        feat_dim: usize,
        k: usize,
        n_seen: usize,
        seed: u64,
    ) -> BackboneParams {
        let mut rng = Rng::new(seed);
        let mut dense = |name: &str, rows: usize, cols: usize| {
            Param::new(
                name,
                (rows, cols),
                rng.normal_vec(rows * cols, 1.0 / (rows as f64).sqrt()),
            )
        };
        BackboneParams {
            w1: dense("backbone.w1", 3, hidden),
            w2: dense("backbone.w2", hidden, hidden),
            post_w1: dense("backbone.post_w1", 2 * hidden, hidden),
            post_w2: dense("backbone.post_w2", hidden, feat_dim),
            cls_w: dense("backbone.cls_w", feat_dim, n_seen),
            b1: Param::zeros("backbone.b1", (1, hidden)),
            b2: Param::zeros("backbone.b2", (1, hidden)),
            post_b1: Param::zeros("backbone.post_b1", (1, hidden)),
            post_b2: Param::zeros("backbone.post_b2", (1, feat_dim)),
            cls_b: Param::zeros("backbone.cls_b", (1, n_seen)),
            hidden,
            feat_dim,
            k,
            frozen: false,
        }
    }

    pub fn enter(&self, tape: &mut Tape) -> Result<BackboneIds, MathError> {
        let trainable = !self.frozen;
        Ok(BackboneIds {
            w1: self.w1.enter(tape, trainable)?,
            b1: self.b1.enter(tape, trainable)?,
            w2: self.w2.enter(tape, trainable)?,
            b2: self.b2.enter(tape, trainable)?,
            post_w1: self.post_w1.enter(tape, trainable)?,
            post_b1: self.post_b1.enter(tape, trainable)?,
            post_w2: self.post_w2.enter(tape, trainable)?,
            post_b2: self.post_b2.enter(tape, trainable)?,
            cls_w: self.cls_w.enter(tape, trainable)?,
            cls_b: self.cls_b.enter(tape, trainable)?,
        })
    }

    pub fn trainable_params(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
            &mut self.post_w1,
            &mut self.post_b1,
            &mut self.post_w2,
            &mut self.post_b2,
            &mut self.cls_w,
            &mut self.cls_b,
        ]
    }

    pub fn named_params(&self) -> Vec<&Param> {
        vec![
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
            &self.post_w1,
            &self.post_b1,
            &self.post_w2,
            &self.post_b2,
            &self.cls_w,
            &self.cls_b,
        ]
    }
}

/// Per-point features on the tape: point MLP, k-NN mean pooling, concat,
/// linear post-pool layer.
pub fn encode_on_tape(
    tape: &mut Tape,
    ids: &BackboneIds,
    points_id: TensorId,
    neighbors: Rc<Vec<Vec<usize>>>,
) -> Result<TensorId, MathError> {
    let h1 = tape.matmul(points_id, ids.w1)?;
    let h1 = tape.add_row(h1, ids.b1)?;
    let h1 = tape.leaky_relu(h1, LEAKY_SLOPE)?;
    let h2 = tape.matmul(h1, ids.w2)?;
    let h2 = tape.add_row(h2, ids.b2)?;
    let h2 = tape.leaky_relu(h2, LEAKY_SLOPE)?;
    let pooled = tape.neighbor_mean(h2, neighbors)?;
    let cat = tape.concat_cols(h2, pooled)?;
    let p1 = tape.matmul(cat, ids.post_w1)?;
    let p1 = tape.add_row(p1, ids.post_b1)?;
    let p1 = tape.leaky_relu(p1, LEAKY_SLOPE)?;
    let feats = tape.matmul(p1, ids.post_w2)?;
    tape.add_row(feats, ids.post_b2)
}

/// Encodes one scene to a [`FeatureSet`] with the current parameters.
/// Pure: no gradients are recorded.
pub fn encode(scene: &SceneSample, params: &BackboneParams) -> Result<FeatureSet, MathError> {
    if scene.len() < params.k {
        return Err(MathError::InvalidArgument {
            op: "encode",
            message: format!("scene has {} points, k is {}", scene.len(), params.k),
        });
    }
    let neighbors = Rc::new(knn_indices(&scene.points, params.k)?);
    let descriptors = local_descriptors(&scene.points, &neighbors);
    let mut tape = Tape::new();
    let points_id = tape.constant((scene.len(), 3), descriptors)?;
    // entered detached regardless of the frozen flag; this path never trains
    let frozen_view = BackboneParams {
        frozen: true,
        ..params.clone()
    };
    let ids = frozen_view.enter(&mut tape)?;
    let feats = encode_on_tape(&mut tape, &ids, points_id, neighbors)?;
    Ok(FeatureSet::new(
        tape.values(feats).to_vec(),
        scene.len(),
        params.feat_dim,
        scene.labels.clone(),
        FeatureOrigin::Real,
    ))
}

#[derive(Clone, Debug)]
pub struct PretrainConfig {
    pub hidden: usize,
    pub feat_dim: usize,
    pub k: usize,
    pub lr: f64,
    pub epochs: usize,
    pub clip_norm: f64,
    pub seed: u64,
}

pub struct PretrainOutcome {
    pub params: BackboneParams,
    pub accuracy: f64,
}

/// Stage 1: cross-entropy over seen classes only. Unseen-labeled points are
/// masked out of the loss; the trace records the audit. Returns the trained
/// (not yet frozen) parameters and the final-epoch masked point accuracy.
pub fn pretrain(
    scenes: &[SceneSample],
    split: &ClassSplit,
    cfg: &PretrainConfig,
    trace: &mut TrainTrace,
) -> Result<PretrainOutcome, TrainError> {
    if scenes.is_empty() {
        return Err(TrainError::Contract("pretrain needs at least one scene".into()));
    }
    let mut params = BackboneParams::init(
        cfg.hidden,
        cfg.feat_dim,
        cfg.k,
        split.seen.len(),
        cfg.seed,
    );
    let mut adam = Adam::new(cfg.lr);

    // neighborhoods depend only on coordinates; compute once per scene
    let mut scene_inputs = Vec::with_capacity(scenes.len());
    for scene in scenes {
        if scene.len() < cfg.k {
            return Err(TrainError::Contract(format!(
                "scene {} has {} points, k is {}",
                scene.scene_id,
                scene.len(),
                cfg.k
            )));
        }
        let neighbors = Rc::new(knn_indices(&scene.points, cfg.k)?);
        let descriptors = local_descriptors(&scene.points, &neighbors);
        let seen_rows: Vec<usize> = (0..scene.len())
            .filter(|&i| split.is_seen(scene.labels[i]))
            .collect();
        let local_labels: Vec<usize> = seen_rows
            .iter()
            .map(|&i| split.seen_position(scene.labels[i]).unwrap())
            .collect();
        scene_inputs.push((descriptors, scene.len(), neighbors, seen_rows, local_labels));
    }

    let mut accuracy = 0.0;
    for epoch in 0..cfg.epochs {
        let snapshot: Vec<Param> = params.named_params().into_iter().cloned().collect();
        let mut epoch_loss = 0.0;
        let mut correct = 0usize;
        let mut counted = 0usize;
        let mut steps = 0usize;

        for (scene_idx, (descriptors, n, neighbors, seen_rows, local_labels)) in
            scene_inputs.iter().enumerate()
        {
            if seen_rows.is_empty() {
                continue;
            }
            for &row in seen_rows {
                trace.audit_label(scenes[scene_idx].labels[row], |l| split.is_seen(l));
            }

            let step = (|| -> Result<f64, MathError> {
                let mut tape = Tape::new();
                let points_id = tape.constant((*n, 3), descriptors.clone())?;
                let ids = params.enter(&mut tape)?;
                let feats = encode_on_tape(&mut tape, &ids, points_id, neighbors.clone())?;
                let seen_feats = tape.gather_rows(feats, seen_rows)?;
                let logits = tape.matmul(seen_feats, ids.cls_w)?;
                let logits = tape.add_row(logits, ids.cls_b)?;
                let loss = softmax_cross_entropy(&mut tape, logits, local_labels)?;

                let logit_vals = tape.values(logits);
                let n_seen_classes = split.seen.len();
                for (i, &label) in local_labels.iter().enumerate() {
                    let row = &logit_vals[i * n_seen_classes..(i + 1) * n_seen_classes];
                    if argmax(row) == label {
                        correct += 1;
                    }
                    counted += 1;
                }

                let grads = tape.backward(loss)?;
                let ids_in_order = [
                    ids.w1, ids.b1, ids.w2, ids.b2, ids.post_w1, ids.post_b1, ids.post_w2,
                    ids.post_b2, ids.cls_w, ids.cls_b,
                ];
                let mut grad_vecs: Vec<Vec<f64>> = ids_in_order
                    .iter()
                    .map(|&id| {
                        grads
                            .get(id)
                            .map(|g| g.to_vec())
                            .unwrap_or_else(|| vec![0.0; tape.values(id).len()])
                    })
                    .collect();
                clip_global_norm(&mut grad_vecs, cfg.clip_norm);
                adam.begin_step();
                for (param, grad) in params.trainable_params().into_iter().zip(&grad_vecs) {
                    adam.update(param, grad)?;
                }
                Ok(tape.item(loss))
            })();

            match step {
                Ok(loss) => {
                    epoch_loss += loss;
                    steps += 1;
                }
                Err(MathError::NonFinite { .. }) | Err(MathError::NonFiniteGradient { .. }) => {
                    return Err(TrainError::Diverged {
                        stage: "pretrain",
                        epoch,
                        last_stable: snapshot,
                    });
                }
                Err(e) => return Err(e.into()),
            }
        }

        accuracy = if counted > 0 {
            correct as f64 / counted as f64
        } else {
            0.0
        };
        let mean_loss = if steps > 0 { epoch_loss / steps as f64 } else { 0.0 };
        trace.log(epoch, vec![("loss", mean_loss), ("accuracy", accuracy)]);
    }

    Ok(PretrainOutcome { params, accuracy })
}

/// Folds an affine feature standardization `(f - mean) / std` into the
/// final encoder layer and, exactly inversely, into the classifier head,
/// so encoded features come out standardized while classifier logits are
/// bit-for-bit preserved up to float re-association.
pub fn fold_feature_standardization(params: &mut BackboneParams, mean: &[f64], std: &[f64]) {
    let d = params.feat_dim;
    assert_eq!(mean.len(), d);
    assert_eq!(std.len(), d);
    let h = params.hidden;
    for j in 0..d {
        let scale = std[j].max(1e-6);
        for i in 0..h {
            params.post_w2.data[i * d + j] /= scale;
        }
        params.post_b2.data[j] = (params.post_b2.data[j] - mean[j]) / scale;
    }
    let n_cls = params.cls_w.shape.1;
    for c in 0..n_cls {
        let mut bias_shift = 0.0;
        for j in 0..d {
            let scale = std[j].max(1e-6);
            bias_shift += mean[j] * params.cls_w.data[j * n_cls + c];
            params.cls_w.data[j * n_cls + c] *= scale;
        }
        params.cls_b.data[c] += bias_shift;
    }
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
