//! Shared visual-semantic space over the prototype bank (stage 3) and the
//! inference-time classifier.
//!
//! Both modalities are re-represented as softmax distributions over the
//! bank: visual rows through projections psi/phi, semantic rows through
//! sigma/theta. A temperature-scaled contrastive loss pulls each point's
//! distribution toward its class's semantic distribution against all other
//! classes. Classification is the argmax of the same similarity.

use crate::autodiff::{clip_global_norm, Adam, MathError, Param, Tape, TensorId};
use crate::backbone::{FeatureOrigin, FeatureSet};
use crate::data::{ClassSplit, SemanticTable};
use crate::generator::{synthesize, GenLossConfig, GeneratorParams, SimilarityKind};
use crate::lgp::LgpBank;
use crate::rng::{derive_seed, Rng};
use crate::trainer::{TrainError, TrainTrace};

/// Stage-3 weights: bias-free d x d projections for both modalities plus
/// the temperature. Initialized near the identity so early distributions
/// stay informative rather than uniform.
#[derive(Clone, Debug)]
pub struct AlignParams {
    pub psi: Param,
    pub phi: Param,
    pub sigma: Param,
    pub theta: Param,
    pub tau2: f64,
    pub d: usize,
    pub frozen: bool,
}

pub struct AlignIds {
    pub psi: TensorId,
    pub phi: TensorId,
    pub sigma: TensorId,
    pub theta: TensorId,
}

impl AlignParams {
    pub fn init(d: usize, tau2: f64, seed: u64) -> AlignParams {
        let mut rng = Rng::new(seed);
        let mut near_identity = |name: &str| {
            let mut data = vec![0.0; d * d];
            for i in 0..d {
                data[i * d + i] = 1.0;
            }
            for v in data.iter_mut() {
                *v += rng.normal() * 0.01;
            }
            Param::new(name, (d, d), data)
        };
        AlignParams {
            psi: near_identity("align.psi"),
            phi: near_identity("align.phi"),
            sigma: near_identity("align.sigma"),
            theta: near_identity("align.theta"),
            tau2,
            d,
            frozen: false,
        }
    }

    pub fn enter(&self, tape: &mut Tape) -> Result<AlignIds, MathError> {
        let trainable = !self.frozen;
        Ok(AlignIds {
            psi: self.psi.enter(tape, trainable)?,
            phi: self.phi.enter(tape, trainable)?,
            sigma: self.sigma.enter(tape, trainable)?,
            theta: self.theta.enter(tape, trainable)?,
        })
    }

    pub fn named_params(&self) -> Vec<&Param> {
        vec![&self.psi, &self.phi, &self.sigma, &self.theta]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.psi, &mut self.phi, &mut self.sigma, &mut self.theta]
    }
}

/// Distributions over prototypes for rows of `inputs` (N x d):
/// softmax_j of proj_a(input_i) . proj_b(g_j) / sqrt(d). Shared by both
/// modality paths, which differ only in their projection pair.
fn rerepresent(
    tape: &mut Tape,
    inputs: TensorId,
    bank: TensorId,
    proj_in: TensorId,
    proj_bank: TensorId,
) -> Result<TensorId, MathError> {
    let (_, d_in) = tape.shape(inputs);
    let (_, d_bank) = tape.shape(bank);
    if d_in != d_bank {
        return Err(MathError::ShapeMismatch {
            op: "rerepresent",
            left: tape.shape(inputs),
            right: tape.shape(bank),
        });
    }
    let projected = tape.matmul(inputs, proj_in)?;
    let bank_proj = tape.matmul(bank, proj_bank)?;
    let bank_t = tape.transpose(bank_proj)?;
    let logits = tape.matmul(projected, bank_t)?;
    tape.softmax_rows(logits, (d_in as f64).sqrt())
}

/// Visual path: features (N x d) -> N x M prototype distributions.
pub fn rerepresent_visual(
    tape: &mut Tape,
    features: TensorId,
    bank: TensorId,
    ids: &AlignIds,
) -> Result<TensorId, MathError> {
    rerepresent(tape, features, bank, ids.psi, ids.phi)
}

/// Semantic path: projected class vectors (C x d) -> C x M distributions.
pub fn rerepresent_semantic(
    tape: &mut Tape,
    projected_semantics: TensorId,
    bank: TensorId,
    ids: &AlignIds,
) -> Result<TensorId, MathError> {
    rerepresent(tape, projected_semantics, bank, ids.sigma, ids.theta)
}

/// Pairwise similarity matrix between rows of `a` (N x M) and rows of `b`
/// (C x M) under the configured kind, on the tape.
pub fn similarity_matrix(
    tape: &mut Tape,
    kind: SimilarityKind,
    a: TensorId,
    b: TensorId,
) -> Result<TensorId, MathError> {
    match kind {
        SimilarityKind::Dot => {
            let bt = tape.transpose(b)?;
            tape.matmul(a, bt)
        }
        SimilarityKind::Cosine => {
            let na = tape.normalize_rows(a)?;
            let nb = tape.normalize_rows(b)?;
            let nbt = tape.transpose(nb)?;
            tape.matmul(na, nbt)
        }
        SimilarityKind::Bhattacharyya => {
            let ra = tape.leaky_relu(a, 0.0)?; // distributions are >= 0; guard roundoff
            let rb = tape.leaky_relu(b, 0.0)?;
            let sa = tape.sqrt(ra)?;
            let sb = tape.sqrt(rb)?;
            let sbt = tape.transpose(sb)?;
            tape.matmul(sa, sbt)
        }
    }
}

/// Contrastive alignment loss: per-point cross-entropy of the
/// temperature-scaled class similarities at the true label, summed over all
/// points (and thereby over classes). The class denominator always spans
/// every row of `semantic_dists`.
pub fn alignment_loss(
    tape: &mut Tape,
    visual_dists: TensorId,
    semantic_dists: TensorId,
    labels: &[usize],
    tau2: f64,
    kind: SimilarityKind,
) -> Result<TensorId, MathError> {
    let (n, _) = tape.shape(visual_dists);
    let (c, _) = tape.shape(semantic_dists);
    if labels.len() != n {
        return Err(MathError::InvalidArgument {
            op: "alignment_loss",
            message: format!("{} labels for {n} points", labels.len()),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(MathError::InvalidArgument {
            op: "alignment_loss",
            message: format!("label {bad} has no semantic distribution (C = {c})"),
        });
    }
    if tau2 <= 0.0 {
        return Err(MathError::InvalidArgument {
            op: "alignment_loss",
            message: format!("tau2 must be positive, got {tau2}"),
        });
    }
    let sims = similarity_matrix(tape, kind, visual_dists, semantic_dists)?;
    let logp = tape.log_softmax_rows(sims, tau2)?;
    let mut mask = vec![0.0; n * c];
    for (i, &l) in labels.iter().enumerate() {
        mask[i * c + l] = 1.0;
    }
    let mask_t = tape.constant((n, c), mask)?;
    let picked = tape.mul(logp, mask_t)?;
    let total = tape.sum(picked)?;
    tape.mul_scalar(total, -1.0)
}

/// Inference rule: each point goes to the class with the highest similarity
/// (the temperature softmax is monotone in the similarity, so the argmax is
/// taken directly). Ties break toward the lowest class index. When
/// `allowed` is given, only those class indices compete.
pub fn classify(
    visual_dists: &[f64],
    n: usize,
    semantic_dists: &[f64],
    c: usize,
    m: usize,
    kind: SimilarityKind,
    allowed: Option<&[usize]>,
) -> Vec<usize> {
    let candidates: Vec<usize> = match allowed {
        Some(list) => list.to_vec(),
        None => (0..c).collect(),
    };
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let vi = &visual_dists[i * m..(i + 1) * m];
        let mut best_class = candidates[0];
        let mut best_sim = f64::NEG_INFINITY;
        for &cls in &candidates {
            let tc = &semantic_dists[cls * m..(cls + 1) * m];
            let sim = vector_similarity(kind, vi, tc);
            if sim > best_sim {
                best_sim = sim;
                best_class = cls;
            }
        }
        out.push(best_class);
    }
    out
}

/// Plain-value similarity between two vectors (no tape).
pub fn vector_similarity(kind: SimilarityKind, a: &[f64], b: &[f64]) -> f64 {
    match kind {
        SimilarityKind::Dot => a.iter().zip(b).map(|(x, y)| x * y).sum(),
        SimilarityKind::Cosine => {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            dot / (na * nb)
        }
        SimilarityKind::Bhattacharyya => a
            .iter()
            .zip(b)
            .map(|(x, y)| (x.max(0.0) * y.max(0.0)).sqrt())
            .sum(),
    }
}

/// Projects the semantic table into feature space with the generator's
/// (frozen) projection layer: C x d values.
pub fn project_semantics(
    semantics: &SemanticTable,
    generator: &GeneratorParams,
) -> Result<Vec<f64>, MathError> {
    let mut tape = Tape::new();
    let table = tape.constant((semantics.n_classes(), semantics.dim), semantics.matrix())?;
    let w = generator.proj_w.enter(&mut tape, false)?;
    let b = generator.proj_b.enter(&mut tape, false)?;
    let projected = tape.matmul(table, w)?;
    let projected = tape.add_row(projected, b)?;
    Ok(tape.values(projected).to_vec())
}

#[derive(Clone, Debug)]
pub struct AlignTrainConfig {
    pub tau2: f64,
    pub lr: f64,
    pub epochs: usize,
    pub clip_norm: f64,
    /// Real seen-class rows sampled per epoch.
    pub batch_points: usize,
    /// Synthetic rows per unseen class, regenerated fresh each epoch.
    pub synthetic_per_class: usize,
    pub similarity: SimilarityKind,
    pub gen_loss: GenLossConfig,
    pub seed: u64,
}

pub struct AlignOutcome {
    pub params: AlignParams,
    pub bank: LgpBank,
}

/// Stage 3: trains psi/phi/sigma/theta and the bank on mixed batches of
/// real seen features plus freshly synthesized unseen features, with the
/// backbone and generator frozen. Synthesis reads the current bank values
/// but contributes no gradient to it.
#[allow(clippy::too_many_arguments)]
pub fn train_alignment(
    real_seen: &FeatureSet,
    semantics: &SemanticTable,
    generator: &GeneratorParams,
    mut bank: LgpBank,
    split: &ClassSplit,
    cfg: &AlignTrainConfig,
    trace: &mut TrainTrace,
) -> Result<AlignOutcome, TrainError> {
    if real_seen.n == 0 {
        return Err(TrainError::Contract("no real seen features supplied".into()));
    }
    if real_seen.origin != FeatureOrigin::Real {
        return Err(TrainError::Contract("stage 3 real batch must be real features".into()));
    }
    if !generator.frozen {
        return Err(TrainError::Contract("generator must be frozen before stage 3".into()));
    }
    for &l in &real_seen.labels {
        if !split.is_seen(l) {
            return Err(TrainError::Contract(format!(
                "unseen-class label {l} in the real stage-3 pool"
            )));
        }
    }

    let mut params = AlignParams::init(bank.d, cfg.tau2, derive_seed(cfg.seed, 0xA11));
    let mut adam = Adam::new(cfg.lr);
    let mut rng = Rng::new(derive_seed(cfg.seed, 0xA12));
    let n_classes = split.n_classes();
    // the frozen sampler keeps the bank the generator was calibrated
    // against; the trainable copy evolves for the re-representation role
    let sampler_bank = bank.clone();

    for epoch in 0..cfg.epochs {
        let snapshot: Vec<Param> = {
            let mut all: Vec<Param> = params.named_params().into_iter().cloned().collect();
            all.push(bank.param.clone());
            all
        };

        let step = (|| -> Result<f64, MathError> {
            // real part of the batch
            let take = cfg.batch_points.min(real_seen.n);
            let idx = rng.sample_indices(real_seen.n, take);
            let mut batch = Vec::with_capacity(take * real_seen.dim);
            let mut labels = Vec::with_capacity(take + split.unseen.len() * cfg.synthetic_per_class);
            for &i in &idx {
                batch.extend_from_slice(real_seen.row(i));
                labels.push(real_seen.labels[i]);
                trace.audit_label(real_seen.labels[i], |l| split.is_seen(l));
            }
            // synthetic unseen part, fresh every epoch, detached
            for &class in &split.unseen {
                let fs = synthesize(
                    class,
                    cfg.synthetic_per_class,
                    semantics,
                    &sampler_bank,
                    generator,
                    &cfg.gen_loss,
                    derive_seed(cfg.seed, (epoch as u64) << 8 | class as u64),
                )?;
                batch.extend_from_slice(&fs.features);
                labels.extend(fs.labels.iter().cloned());
            }
            let total_rows = labels.len();

            let mut tape = Tape::new();
            let ids = params.enter(&mut tape)?;
            let bank_id = bank.enter(&mut tape, true)?;
            let feats = tape.constant((total_rows, real_seen.dim), batch)?;
            let visual = rerepresent_visual(&mut tape, feats, bank_id, &ids)?;

            let projected = project_semantics(semantics, generator)?;
            let sem_in = tape.constant((n_classes, bank.d), projected)?;
            let semantic = rerepresent_semantic(&mut tape, sem_in, bank_id, &ids)?;

            let loss = alignment_loss(&mut tape, visual, semantic, &labels, cfg.tau2, cfg.similarity)?;
            // scale for a batch-size-independent step; the argmin is unchanged
            let objective = tape.mul_scalar(loss, 1.0 / total_rows as f64)?;
            let loss_value = tape.item(objective);

            let grads = tape.backward(objective)?;
            let entered = [ids.psi, ids.phi, ids.sigma, ids.theta, bank_id];
            let mut grad_vecs: Vec<Vec<f64>> = entered
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
            let mut targets = params.params_mut();
            targets.push(&mut bank.param);
            for (param, grad) in targets.into_iter().zip(&grad_vecs) {
                adam.update(param, grad)?;
            }
            Ok(loss_value)
        })();

        match step {
            Ok(loss) => trace.log(epoch, vec![("loss", loss)]),
            Err(MathError::NonFinite { .. }) | Err(MathError::NonFiniteGradient { .. }) => {
                return Err(TrainError::Diverged {
                    stage: "alignment",
                    epoch,
                    last_stable: snapshot,
                });
            }
            Err(e) => return Err(e.into()),
        }
    }

    Ok(AlignOutcome { params, bank })
}

/// Plain-value re-representation used at inference: softmax over prototypes
/// of proj_in(x) . proj_bank(g)^T / sqrt(d). Returns N x M row-major.
pub fn rerepresent_values(
    inputs: &[f64],
    n: usize,
    d: usize,
    bank: &LgpBank,
    proj_in: &Param,
    proj_bank: &Param,
) -> Result<Vec<f64>, MathError> {
    let mut tape = Tape::new();
    let x = tape.constant((n, d), inputs.to_vec())?;
    let b = bank.enter(&mut tape, false)?;
    let pi = proj_in.enter(&mut tape, false)?;
    let pb = proj_bank.enter(&mut tape, false)?;
    let dists = rerepresent(&mut tape, x, b, pi, pb)?;
    Ok(tape.values(dists).to_vec())
}
