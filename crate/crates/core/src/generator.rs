//! Geometry-aware feature generator (stage 2).
//!
//! Per seen class, semantics are projected into feature space, enriched by
//! cross-attention over the prototype bank, perturbed with noise, and pushed
//! through a small MLP. Training matches generated to real feature
//! distributions with a multi-bandwidth Gaussian MMD and adds a contrastive
//! self-consistency term pairing two subsamples of the generated set against
//! real features of the other classes.

use std::collections::BTreeMap;

use crate::autodiff::{clip_global_norm, Adam, MathError, Param, Tape, TensorId};
use crate::backbone::{FeatureOrigin, FeatureSet};
use crate::data::{ClassSplit, SemanticTable};
use crate::lgp::{cross_attend, CrossAttention, CrossAttentionIds, LgpBank};
use crate::rng::{derive_seed, Rng};
use crate::trainer::{TrainError, TrainTrace};
use crate::LEAKY_SLOPE;

/// How two feature sets (or two distribution vectors) are compared.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimilarityKind {
    /// Cosine of mean-pooled vectors (default).
    Cosine,
    /// Plain dot product of mean-pooled vectors.
    Dot,
    /// Bhattacharyya coefficient; only meaningful for probability vectors,
    /// used by the alignment stage when configured.
    Bhattacharyya,
}

impl SimilarityKind {
    pub fn parse(s: &str) -> Option<SimilarityKind> {
        match s {
            "cosine" => Some(SimilarityKind::Cosine),
            "dot" => Some(SimilarityKind::Dot),
            "bhattacharyya" => Some(SimilarityKind::Bhattacharyya),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SimilarityKind::Cosine => "cosine",
            SimilarityKind::Dot => "dot",
            SimilarityKind::Bhattacharyya => "bhattacharyya",
        }
    }
}

/// Similarity of two single-row vectors on the tape, as a 1x1 node.
/// Bhattacharyya falls back to cosine here: generator inputs are raw
/// features, not distributions.
pub fn row_similarity(
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
        SimilarityKind::Cosine | SimilarityKind::Bhattacharyya => {
            let na = tape.normalize_rows(a)?;
            let nb = tape.normalize_rows(b)?;
            let nbt = tape.transpose(nb)?;
            tape.matmul(na, nbt)
        }
    }
}

/// Generator weights: semantic projection, shared cross-attention, and the
/// output MLP.
#[derive(Clone, Debug)]
pub struct GeneratorParams {
    pub proj_w: Param,
    pub proj_b: Param,
    pub attn: CrossAttention,
    pub gen_w1: Param,
    pub gen_b1: Param,
    pub gen_w2: Param,
    pub gen_b2: Param,
    pub d_t: usize,
    pub d: usize,
    pub hidden: usize,
    pub frozen: bool,
}

pub struct GeneratorIds {
    pub proj_w: TensorId,
    pub proj_b: TensorId,
    pub attn: CrossAttentionIds,
    pub gen_w1: TensorId,
    pub gen_b1: TensorId,
    pub gen_w2: TensorId,
    pub gen_b2: TensorId,
}

impl GeneratorParams {
    pub fn init(d_t: usize, d: usize, hidden: usize, seed: u64) -> GeneratorParams {
        let mut rng = Rng::new(seed);
        let mut dense = |name: &str, rows: usize, cols: usize| {
            Param::new(
                name,
                (rows, cols),
                rng.normal_vec(rows * cols, 1.0 / (rows as f64).sqrt()),
            )
        };
        GeneratorParams {
            proj_w: dense("generator.proj_w", d_t, d),
            gen_w1: dense("generator.gen_w1", d, hidden),
            gen_w2: dense("generator.gen_w2", hidden, d),
            proj_b: Param::zeros("generator.proj_b", (1, d)),
            gen_b1: Param::zeros("generator.gen_b1", (1, hidden)),
            gen_b2: Param::zeros("generator.gen_b2", (1, d)),
            attn: CrossAttention::init(d, derive_seed(seed, 0xA77)),
            d_t,
            d,
            hidden,
            frozen: false,
        }
    }

    pub fn enter(&self, tape: &mut Tape) -> Result<GeneratorIds, MathError> {
        let trainable = !self.frozen;
        Ok(GeneratorIds {
            proj_w: self.proj_w.enter(tape, trainable)?,
            proj_b: self.proj_b.enter(tape, trainable)?,
            attn: self.attn.enter(tape, trainable)?,
            gen_w1: self.gen_w1.enter(tape, trainable)?,
            gen_b1: self.gen_b1.enter(tape, trainable)?,
            gen_w2: self.gen_w2.enter(tape, trainable)?,
            gen_b2: self.gen_b2.enter(tape, trainable)?,
        })
    }

    pub fn named_params(&self) -> Vec<&Param> {
        let mut all = vec![&self.proj_w, &self.proj_b];
        all.extend(self.attn.params());
        all.extend([&self.gen_w1, &self.gen_b1, &self.gen_w2, &self.gen_b2]);
        all
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut all = vec![&mut self.proj_w, &mut self.proj_b];
        all.extend(self.attn.params_mut());
        all.extend([
            &mut self.gen_w1,
            &mut self.gen_b1,
            &mut self.gen_w2,
            &mut self.gen_b2,
        ]);
        all
    }
}

/// Loss configuration for stage 2.
#[derive(Clone, Debug)]
pub struct GenLossConfig {
    pub tau1: f64,
    pub lambda1: f64,
    /// Subsample size for the self-consistency positives; 0 means
    /// ceil(n_generated / 2).
    pub n_k: usize,
    /// Multipliers applied to the median pairwise squared distance of the
    /// real batch to form the Gaussian kernel bandwidth mixture.
    pub bandwidth_scales: Vec<f64>,
    pub noise_scale: f64,
    /// One shared noise row per class instead of per-point noise.
    pub single_z: bool,
    /// Ablation: bypass cross-attention, feeding projected semantics + noise
    /// only.
    pub use_lgp: bool,
    pub similarity: SimilarityKind,
    /// Training-time perturbation of the semantic anchors (one draw per
    /// class and step). Smooths the learned map around each anchor so it
    /// interpolates rather than memorizes; never applied at sampling time.
    pub semantic_jitter: f64,
}

impl Default for GenLossConfig {
    fn default() -> Self {
        GenLossConfig {
            tau1: 0.5,
            lambda1: 1.0,
            n_k: 0,
            bandwidth_scales: vec![1.0, 2.0, 4.0, 8.0, 16.0],
            noise_scale: 1.0,
            single_z: false,
            use_lgp: true,
            similarity: SimilarityKind::Cosine,
            semantic_jitter: 0.05,
        }
    }
}

impl GenLossConfig {
    pub fn effective_n_k(&self, n_generated: usize) -> usize {
        if self.n_k == 0 {
            n_generated.div_ceil(2)
        } else {
            self.n_k
        }
    }
}

/// Synthesizes `n_c` feature rows for class `c` on the tape; the returned id
/// has shape n_c x d. Noise is drawn from `rng`.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_on_tape(
    tape: &mut Tape,
    ids: &GeneratorIds,
    bank_id: TensorId,
    class: usize,
    n_c: usize,
    semantics: &SemanticTable,
    cfg: &GenLossConfig,
    rng: &mut Rng,
) -> Result<TensorId, MathError> {
    if n_c == 0 {
        return Err(MathError::InvalidArgument {
            op: "synthesize",
            message: "n_c must be at least 1".into(),
        });
    }
    let vector = semantics.vector(class).map_err(|e| MathError::InvalidArgument {
        op: "synthesize",
        message: e.to_string(),
    })?;
    // replicate t_c to n_c rows, project into feature space
    let mut replicated = Vec::with_capacity(n_c * semantics.dim);
    for _ in 0..n_c {
        replicated.extend_from_slice(vector);
    }
    let rep = tape.constant((n_c, semantics.dim), replicated)?;
    let projected = tape.matmul(rep, ids.proj_w)?;
    let projected = tape.add_row(projected, ids.proj_b)?;

    let with_geometry = if cfg.use_lgp {
        let attended = cross_attend(tape, &ids.attn, projected, bank_id)?;
        tape.add(attended.output, projected)?
    } else {
        projected
    };

    let d = tape.shape(with_geometry).1;
    let noisy = if cfg.noise_scale > 0.0 {
        if cfg.single_z {
            let z = tape.constant((1, d), rng.normal_vec(d, cfg.noise_scale))?;
            tape.add_row(with_geometry, z)?
        } else {
            let z = tape.constant((n_c, d), rng.normal_vec(n_c * d, cfg.noise_scale))?;
            tape.add(with_geometry, z)?
        }
    } else {
        with_geometry
    };

    let h = tape.matmul(noisy, ids.gen_w1)?;
    let h = tape.add_row(h, ids.gen_b1)?;
    let h = tape.leaky_relu(h, LEAKY_SLOPE)?;
    let out = tape.matmul(h, ids.gen_w2)?;
    tape.add_row(out, ids.gen_b2)
}

/// Convenience wrapper producing a detached [`FeatureSet`].
pub fn synthesize(
    class: usize,
    n_c: usize,
    semantics: &SemanticTable,
    bank: &LgpBank,
    params: &GeneratorParams,
    cfg: &GenLossConfig,
    seed: u64,
) -> Result<FeatureSet, MathError> {
    let mut tape = Tape::new();
    let frozen_view = GeneratorParams {
        frozen: true,
        ..params.clone()
    };
    let ids = frozen_view.enter(&mut tape)?;
    let bank_id = bank.enter(&mut tape, false)?;
    let mut rng = Rng::new(seed);
    let out = synthesize_on_tape(
        &mut tape, &ids, bank_id, class, n_c, semantics, cfg, &mut rng,
    )?;
    Ok(FeatureSet::new(
        tape.values(out).to_vec(),
        n_c,
        params.d,
        vec![class; n_c],
        FeatureOrigin::Synthetic,
    ))
}

/// Median pairwise squared distance of a flat n x d block (the bandwidth
/// heuristic). Returns 1.0 for degenerate inputs.
pub fn median_pairwise_sq_dist(values: &[f64], n: usize, d: usize) -> f64 {
    if n < 2 {
        return 1.0;
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut acc = 0.0;
            for c in 0..d {
                let diff = values[i * d + c] - values[j * d + c];
                acc += diff * diff;
            }
            dists.push(acc);
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = dists[dists.len() / 2];
    if median > 1e-12 {
        median
    } else {
        1.0
    }
}

/// Biased squared-MMD estimator with set-size normalization:
/// mean k(x,x') + mean k(y,y') - 2 mean k(x,y), where k is a sum of
/// Gaussian kernels exp(-||a-b||^2 / bw) over `bandwidths`.
pub fn mmd_loss(
    tape: &mut Tape,
    real: TensorId,
    fake: TensorId,
    bandwidths: &[f64],
) -> Result<TensorId, MathError> {
    let (n, d) = tape.shape(real);
    let (m, d2) = tape.shape(fake);
    if d != d2 {
        return Err(MathError::ShapeMismatch {
            op: "mmd_loss",
            left: (n, d),
            right: (m, d2),
        });
    }
    if bandwidths.is_empty() {
        return Err(MathError::InvalidArgument {
            op: "mmd_loss",
            message: "bandwidth list is empty".into(),
        });
    }
    if bandwidths.iter().any(|&b| b <= 0.0) {
        return Err(MathError::InvalidArgument {
            op: "mmd_loss",
            message: "bandwidths must be positive".into(),
        });
    }

    let xx = pairwise_sq_dists(tape, real, real)?;
    let yy = pairwise_sq_dists(tape, fake, fake)?;
    let xy = pairwise_sq_dists(tape, real, fake)?;

    let mut total: Option<TensorId> = None;
    for &bw in bandwidths {
        let kxx = kernel_mean(tape, xx, bw)?;
        let kyy = kernel_mean(tape, yy, bw)?;
        let kxy = kernel_mean(tape, xy, bw)?;
        let kxy2 = tape.mul_scalar(kxy, -2.0)?;
        let partial = tape.add(kxx, kyy)?;
        let partial = tape.add(partial, kxy2)?;
        total = Some(match total {
            None => partial,
            Some(t) => tape.add(t, partial)?,
        });
    }
    Ok(total.unwrap())
}

/// Matrix of squared Euclidean distances between rows of `a` (n x d) and
/// rows of `b` (m x d), composed from tape primitives so gradients flow.
fn pairwise_sq_dists(
    tape: &mut Tape,
    a: TensorId,
    b: TensorId,
) -> Result<TensorId, MathError> {
    let (n, _) = tape.shape(a);
    let (m, _) = tape.shape(b);
    let a_sq = tape.mul(a, a)?;
    let a_row = tape.row_sums(a_sq)?; // n x 1
    let b_sq = tape.mul(b, b)?;
    let b_row = tape.row_sums(b_sq)?; // m x 1
    let ones_m = tape.constant((1, m), vec![1.0; m])?;
    let ones_n = tape.constant((n, 1), vec![1.0; n])?;
    let a_block = tape.matmul(a_row, ones_m)?; // n x m
    let b_row_t = tape.transpose(b_row)?; // 1 x m
    let b_block = tape.matmul(ones_n, b_row_t)?; // n x m
    let bt = tape.transpose(b)?;
    let cross = tape.matmul(a, bt)?; // n x m
    let cross2 = tape.mul_scalar(cross, -2.0)?;
    let sum = tape.add(a_block, b_block)?;
    let dists = tape.add(sum, cross2)?;
    // squared distances can dip epsilon-negative in float; clamp via relu
    tape.leaky_relu(dists, 0.0)
}

fn kernel_mean(tape: &mut Tape, sq_dists: TensorId, bandwidth: f64) -> Result<TensorId, MathError> {
    let scaled = tape.mul_scalar(sq_dists, -1.0 / bandwidth)?;
    let k = tape.exp(scaled)?;
    tape.mean(k)
}

/// Contrastive self-consistency loss for one class's generated features.
///
/// Two independent `n_k`-subsets of `fake` form the positive pair; each
/// entry of `real_others` contributes one negative via an `n_k`-subsample
/// (or the whole set when smaller). Returns a non-negative scalar.
pub fn self_consistency_loss(
    tape: &mut Tape,
    fake: TensorId,
    real_others: &[TensorId],
    cfg: &GenLossConfig,
    rng: &mut Rng,
) -> Result<TensorId, MathError> {
    let (n_c, _) = tape.shape(fake);
    let n_k = cfg.effective_n_k(n_c);
    if n_k > n_c {
        return Err(MathError::InvalidArgument {
            op: "self_consistency_loss",
            message: format!("N_k={n_k} exceeds generated count {n_c}"),
        });
    }
    if cfg.tau1 <= 0.0 {
        return Err(MathError::InvalidArgument {
            op: "self_consistency_loss",
            message: format!("tau1 must be positive, got {}", cfg.tau1),
        });
    }

    let idx_a = rng.sample_indices(n_c, n_k);
    let idx_b = rng.sample_indices(n_c, n_k);
    let sub_a = tape.gather_rows(fake, &idx_a)?;
    let sub_b = tape.gather_rows(fake, &idx_b)?;
    let mean_a = tape.col_means(sub_a)?;
    let mean_b = tape.col_means(sub_b)?;
    let s_pos = row_similarity(tape, cfg.similarity, mean_a, mean_b)?;
    let pos_logit = tape.mul_scalar(s_pos, 1.0 / cfg.tau1)?;

    // loss = log(exp(pos) + sum_i exp(neg_i)) - pos
    let mut denom = tape.exp(pos_logit)?;
    for &other in real_others {
        let (n_other, _) = tape.shape(other);
        let take = n_k.min(n_other);
        let idx = rng.sample_indices(n_other, take);
        let sub = tape.gather_rows(other, &idx)?;
        let mean_o = tape.col_means(sub)?;
        let s_neg = row_similarity(tape, cfg.similarity, mean_a, mean_o)?;
        let neg_logit = tape.mul_scalar(s_neg, 1.0 / cfg.tau1)?;
        let e = tape.exp(neg_logit)?;
        denom = tape.add(denom, e)?;
    }
    let log_denom = tape.ln(denom)?;
    tape.sub(log_denom, pos_logit)
}

/// L_G = sum over seen classes of (MMD_c + lambda1 * self_c).
/// Every seen class must contribute exactly one term pair.
pub fn generator_loss(
    tape: &mut Tape,
    per_class: &BTreeMap<usize, (TensorId, TensorId)>,
    split: &ClassSplit,
    lambda1: f64,
) -> Result<TensorId, MathError> {
    for class in &split.seen {
        if !per_class.contains_key(class) {
            return Err(MathError::InvalidArgument {
                op: "generator_loss",
                message: format!("missing loss terms for seen class {class}"),
            });
        }
    }
    let mut total: Option<TensorId> = None;
    for (&class, &(mmd, selfc)) in per_class {
        if !split.is_seen(class) {
            return Err(MathError::InvalidArgument {
                op: "generator_loss",
                message: format!("class {class} is not a seen class"),
            });
        }
        let weighted = tape.mul_scalar(selfc, lambda1)?;
        let term = tape.add(mmd, weighted)?;
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
    }
    total.ok_or(MathError::InvalidArgument {
        op: "generator_loss",
        message: "no class terms supplied".into(),
    })
}

#[derive(Clone, Debug)]
pub struct GeneratorTrainConfig {
    pub loss: GenLossConfig,
    pub lr: f64,
    pub epochs: usize,
    pub clip_norm: f64,
    /// Generated rows per class and step.
    pub n_generated: usize,
    /// Cap on real rows per class and step.
    pub real_batch: usize,
    pub bank_trainable: bool,
    pub seed: u64,
}

pub struct GeneratorOutcome {
    pub params: GeneratorParams,
    pub bank: LgpBank,
}

/// Stage 2: minimizes L_G over the seen classes with the backbone frozen.
/// `class_pools[c]` holds real features for class c; unseen pools must be
/// absent or empty and never enter the loss (audited via the trace).
pub fn train_generator(
    class_pools: &BTreeMap<usize, FeatureSet>,
    semantics: &SemanticTable,
    mut bank: LgpBank,
    split: &ClassSplit,
    d_t: usize,
    d: usize,
    hidden: usize,
    cfg: &GeneratorTrainConfig,
    trace: &mut TrainTrace,
) -> Result<GeneratorOutcome, TrainError> {
    for (&class, pool) in class_pools {
        if !split.is_seen(class) && pool.n > 0 {
            return Err(TrainError::Contract(format!(
                "real features for unseen class {class} offered to the generator"
            )));
        }
        if pool.origin != FeatureOrigin::Real {
            return Err(TrainError::Contract(format!(
                "class {class} pool is not real features"
            )));
        }
    }
    for &class in &split.seen {
        let pool = class_pools.get(&class);
        if pool.map(|p| p.n).unwrap_or(0) == 0 {
            return Err(TrainError::Contract(format!(
                "seen class {class} has no real features"
            )));
        }
    }

    let mut params = GeneratorParams::init(d_t, d, hidden, derive_seed(cfg.seed, 0x6E4));
    let mut adam = Adam::new(cfg.lr);
    let mut rng = Rng::new(derive_seed(cfg.seed, 0x6E5));

    for epoch in 0..cfg.epochs {
        let snapshot: Vec<Param> = {
            let mut all: Vec<Param> = params.named_params().into_iter().cloned().collect();
            all.push(bank.param.clone());
            all
        };

        // stochastic smoothing: each step sees slightly displaced anchors
        let train_semantics = if cfg.loss.semantic_jitter > 0.0 {
            let mut jittered = semantics.clone();
            for vec in jittered.vectors.iter_mut() {
                for v in vec.iter_mut() {
                    *v += cfg.loss.semantic_jitter * rng.normal();
                }
            }
            jittered
        } else {
            semantics.clone()
        };

        let step = (|| -> Result<(f64, f64, f64), MathError> {
            let mut tape = Tape::new();
            let ids = params.enter(&mut tape)?;
            let bank_id = bank.enter(&mut tape, cfg.bank_trainable)?;

            // enter per-class real batches once; reused as negatives
            let mut real_ids: BTreeMap<usize, TensorId> = BTreeMap::new();
            for &class in &split.seen {
                let pool = &class_pools[&class];
                let take = cfg.real_batch.min(pool.n);
                let idx = rng.sample_indices(pool.n, take);
                let mut batch = Vec::with_capacity(take * pool.dim);
                for &i in &idx {
                    batch.extend_from_slice(pool.row(i));
                    trace.audit_label(pool.labels[i], |l| split.is_seen(l));
                }
                let id = tape.constant((take, pool.dim), batch)?;
                real_ids.insert(class, id);
            }

            let mut per_class: BTreeMap<usize, (TensorId, TensorId)> = BTreeMap::new();
            let mut mmd_total = 0.0;
            let mut self_total = 0.0;
            for &class in &split.seen {
                let real_id = real_ids[&class];
                let fake_id = synthesize_on_tape(
                    &mut tape,
                    &ids,
                    bank_id,
                    class,
                    cfg.n_generated,
                    &train_semantics,
                    &cfg.loss,
                    &mut rng,
                )?;
                let (rn, rd) = tape.shape(real_id);
                let median = median_pairwise_sq_dist(tape.values(real_id), rn, rd);
                let bandwidths: Vec<f64> = cfg
                    .loss
                    .bandwidth_scales
                    .iter()
                    .map(|s| s * median)
                    .collect();
                let mmd = mmd_loss(&mut tape, real_id, fake_id, &bandwidths)?;

                let negatives: Vec<TensorId> = split
                    .seen
                    .iter()
                    .filter(|&&c| c != class)
                    .map(|c| real_ids[c])
                    .collect();
                let selfc =
                    self_consistency_loss(&mut tape, fake_id, &negatives, &cfg.loss, &mut rng)?;
                mmd_total += tape.item(mmd);
                self_total += tape.item(selfc);
                per_class.insert(class, (mmd, selfc));
            }

            let loss = generator_loss(&mut tape, &per_class, split, cfg.loss.lambda1)?;
            let loss_value = tape.item(loss);
            let grads = tape.backward(loss)?;

            let mut entered: Vec<TensorId> = vec![
                ids.proj_w,
                ids.proj_b,
                ids.attn.wq,
                ids.attn.wk,
                ids.attn.wv,
                ids.attn.wo,
                ids.gen_w1,
                ids.gen_b1,
                ids.gen_w2,
                ids.gen_b2,
            ];
            if cfg.bank_trainable {
                entered.push(bank_id);
            }
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
            if cfg.bank_trainable {
                targets.push(&mut bank.param);
            }
            for (param, grad) in targets.into_iter().zip(&grad_vecs) {
                adam.update(param, grad)?;
            }
            Ok((mmd_total, self_total, loss_value))
        })();

        match step {
            Ok((mmd, selfc, total)) => {
                trace.log(epoch, vec![("mmd", mmd), ("self", selfc), ("total", total)]);
            }
            Err(MathError::NonFinite { .. }) | Err(MathError::NonFiniteGradient { .. }) => {
                return Err(TrainError::Diverged {
                    stage: "generator",
                    epoch,
                    last_stable: snapshot,
                });
            }
            Err(e) => return Err(e.into()),
        }
    }

    Ok(GeneratorOutcome { params, bank })
}
