//! Three-stage training orchestration, evaluation, and the on-disk run
//! layout shared by the command-line driver and the integration tests.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::alignment::{
    classify, project_semantics, rerepresent_values, train_alignment, AlignParams,
    AlignTrainConfig,
};
use crate::autodiff::{MathError, Param};
use crate::backbone::{
    encode, fold_feature_standardization, pretrain, BackboneParams, FeatureOrigin, FeatureSet,
    PretrainConfig,
};
use crate::checkpoint::{load_params, save_params, take_tensor, CheckpointError};
use crate::config::ExperimentConfig;
use crate::data::{
    compose_corpus, default_class_defs, load_corpus, load_word_vectors, split_classes,
    synth_semantic_embeddings, write_corpus, ClassDef, ClassSplit, DataError, SceneSample,
    SemanticTable,
};
use crate::generator::{
    train_generator, GenLossConfig, GeneratorParams, GeneratorTrainConfig, SimilarityKind,
};
use crate::lgp::{init_bank, CrossAttention, LgpBank};
use crate::manifest::{hash_files, RunManifest};
use crate::metrics::{build_report, lgp_entropy, EvalReport};
use crate::rng::derive_seed;
use crate::trainer::{TrainError, TrainTrace};

#[derive(Debug)]
pub enum PipelineError {
    Math(MathError),
    Data(DataError),
    Train(TrainError),
    Checkpoint(CheckpointError),
    /// A later stage was requested before its prerequisite produced a
    /// checkpoint.
    MissingStage { needed: &'static str, hint: String },
}

impl fmt::Display for PipelineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PipelineError::Math(e) => write!(f, "{e}"),
            PipelineError::Data(e) => write!(f, "{e}"),
            PipelineError::Train(e) => write!(f, "{e}"),
            PipelineError::Checkpoint(e) => write!(f, "{e}"),
            PipelineError::MissingStage { needed, hint } => {
                write!(f, "stage `{needed}` has not produced a checkpoint yet; {hint}")
            }
        }
    }
}

impl std::error::Error for PipelineError {}

impl From<MathError> for PipelineError {
    fn from(e: MathError) -> Self {
        PipelineError::Math(e)
    }
}
impl From<DataError> for PipelineError {
    fn from(e: DataError) -> Self {
        PipelineError::Data(e)
    }
}
impl From<TrainError> for PipelineError {
    fn from(e: TrainError) -> Self {
        PipelineError::Train(e)
    }
}
impl From<CheckpointError> for PipelineError {
    fn from(e: CheckpointError) -> Self {
        PipelineError::Checkpoint(e)
    }
}

/// In-memory corpus: train/test scene partition plus class metadata.
#[derive(Debug)]
pub struct Corpus {
    pub train: Vec<SceneSample>,
    pub test: Vec<SceneSample>,
    pub class_names: Vec<String>,
    pub split: ClassSplit,
    pub semantics: SemanticTable,
}

/// Builds the synthetic corpus described by the config, entirely in memory.
/// Scene ids 0..train_scenes are the training partition.
pub fn build_corpus(cfg: &ExperimentConfig) -> Result<Corpus, PipelineError> {
    let class_defs = default_class_defs();
    let names: Vec<String> = class_defs.iter().map(|d| d.name.clone()).collect();
    let total = cfg.train_scenes + cfg.test_scenes;
    let scenes = compose_corpus(&class_defs, total, cfg.points_per_scene, cfg.seed)?;
    let split = split_classes(class_defs.len(), cfg.unseen, cfg.seed)?;
    let semantics = build_semantics(cfg, &class_defs, &names)?;
    let mut scenes = scenes;
    let test = scenes.split_off(cfg.train_scenes);
    Ok(Corpus {
        train: scenes,
        test,
        class_names: names,
        split,
        semantics,
    })
}

fn build_semantics(
    cfg: &ExperimentConfig,
    class_defs: &[ClassDef],
    names: &[String],
) -> Result<SemanticTable, PipelineError> {
    if cfg.embedding_files.is_empty() {
        Ok(synth_semantic_embeddings(
            class_defs,
            cfg.d_t,
            cfg.sem_noise,
            derive_seed(cfg.seed, 0x5EA),
        )?)
    } else {
        let paths: Vec<PathBuf> = cfg.embedding_files.iter().map(PathBuf::from).collect();
        Ok(load_word_vectors(&paths, names)?)
    }
}

/// Reads a corpus directory back and partitions scenes by the configured
/// train count (scene ids below `train_scenes` are training scenes).
pub fn corpus_from_disk(dir: &Path, cfg: &ExperimentConfig) -> Result<Corpus, PipelineError> {
    let on_disk = load_corpus(dir)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for scene in on_disk.scenes {
        if scene.scene_id < cfg.train_scenes {
            train.push(scene);
        } else {
            test.push(scene);
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(PipelineError::Data(DataError::Config(format!(
            "corpus at {} does not cover both partitions (train_scenes={})",
            dir.display(),
            cfg.train_scenes
        ))));
    }
    Ok(Corpus {
        train,
        test,
        class_names: on_disk.class_names,
        split: on_disk.split,
        semantics: on_disk.semantics,
    })
}

/// Everything the inference path needs.
pub struct TrainedModel {
    pub backbone: BackboneParams,
    pub generator: GeneratorParams,
    pub align: Option<AlignParams>,
    pub bank: LgpBank,
}

#[derive(Debug, Default)]
pub struct StageTimings {
    pub pretrain_s: f64,
    pub generator_s: f64,
    pub alignment_s: f64,
}

pub struct RunTraces {
    pub pretrain: TrainTrace,
    pub generator: TrainTrace,
    pub alignment: TrainTrace,
    pub pretrain_accuracy: f64,
    /// Bitwise changes detected in parameters that were contractually
    /// frozen. Must be zero on any healthy run.
    pub freeze_violations: u64,
    pub timings: StageTimings,
}

fn bits_of(params: &[&Param]) -> Vec<u64> {
    params
        .iter()
        .flat_map(|p| p.data.iter().map(|v| v.to_bits()))
        .collect()
}

/// Encodes the training scenes with the frozen backbone and groups rows by
/// class. Returns per-seen-class pools and the flattened pool of all
/// seen-labeled rows (for stage 3), both excluding unseen-class points.
pub fn build_class_pools(
    train: &[SceneSample],
    backbone: &BackboneParams,
    split: &ClassSplit,
) -> Result<(BTreeMap<usize, FeatureSet>, FeatureSet), PipelineError> {
    let dim = backbone.feat_dim;
    let mut per_class: BTreeMap<usize, (Vec<f64>, Vec<usize>)> = BTreeMap::new();
    let mut all_rows: Vec<f64> = Vec::new();
    let mut all_labels: Vec<usize> = Vec::new();
    for scene in train {
        let fs = encode(scene, backbone)?;
        for i in 0..fs.n {
            let label = fs.labels[i];
            if split.is_seen(label) {
                let entry = per_class.entry(label).or_default();
                entry.0.extend_from_slice(fs.row(i));
                entry.1.push(label);
                all_rows.extend_from_slice(fs.row(i));
                all_labels.push(label);
            }
        }
    }
    let pools = per_class
        .into_iter()
        .map(|(class, (rows, labels))| {
            let n = labels.len();
            (
                class,
                FeatureSet::new(rows, n, dim, labels, FeatureOrigin::Real),
            )
        })
        .collect();
    let n_all = all_labels.len();
    let all = FeatureSet::new(all_rows, n_all, dim, all_labels, FeatureOrigin::Real);
    Ok((pools, all))
}

/// Standardizes the feature space on seen-class statistics so stages 2-3
/// see a stable scale regardless of where pre-training landed; folded
/// exactly into the encoder, so it stays part of the frozen extractor.
fn standardize_backbone(corpus: &Corpus, backbone: &mut BackboneParams) -> Result<(), PipelineError> {
    let (_, seen_rows) = build_class_pools(&corpus.train, backbone, &corpus.split)?;
    let d = backbone.feat_dim;
    let n = seen_rows.n.max(1) as f64;
    let mut mean = vec![0.0; d];
    for i in 0..seen_rows.n {
        for (m, v) in mean.iter_mut().zip(seen_rows.row(i)) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; d];
    for i in 0..seen_rows.n {
        for j in 0..d {
            let diff = seen_rows.row(i)[j] - mean[j];
            std[j] += diff * diff / n;
        }
    }
    for v in std.iter_mut() {
        *v = v.sqrt();
    }
    fold_feature_standardization(backbone, &mean, &std);
    Ok(())
}

fn gen_loss_config(cfg: &ExperimentConfig) -> GenLossConfig {
    GenLossConfig {
        tau1: cfg.tau1,
        lambda1: if cfg.no_self_loss { 0.0 } else { cfg.lambda1 },
        n_k: cfg.n_k,
        bandwidth_scales: vec![1.0, 2.0, 4.0, 8.0, 16.0],
        noise_scale: cfg.noise_scale,
        single_z: cfg.single_z,
        use_lgp: !cfg.no_lgp_in_generator,
        semantic_jitter: cfg.semantic_jitter,
        similarity: match cfg.similarity {
            // set-level similarity of raw features; Bhattacharyya only
            // applies to distributions, so the generator uses cosine then
            SimilarityKind::Bhattacharyya => SimilarityKind::Cosine,
            other => other,
        },
    }
}

/// Runs stages 1-3 in order with freeze contracts enforced between them.
pub fn train_all(corpus: &Corpus, cfg: &ExperimentConfig) -> Result<(TrainedModel, RunTraces), PipelineError> {
    let mut timings = StageTimings::default();

    // stage 1
    let mut pre_trace = TrainTrace::new();
    let t0 = Instant::now();
    let pre = pretrain(
        &corpus.train,
        &corpus.split,
        &PretrainConfig {
            hidden: cfg.h,
            feat_dim: cfg.d,
            k: cfg.k,
            lr: cfg.lr_pretrain,
            epochs: cfg.epochs_pretrain,
            clip_norm: cfg.clip_norm,
            seed: derive_seed(cfg.seed, 0x1),
        },
        &mut pre_trace,
    )?;
    timings.pretrain_s = t0.elapsed().as_secs_f64();
    let mut backbone = pre.params;
    backbone.frozen = true;
    standardize_backbone(corpus, &mut backbone)?;
    let backbone_bits = bits_of(&backbone.named_params());

    // real features once, from the frozen (standardized) backbone
    let (pools, all_seen) = build_class_pools(&corpus.train, &backbone, &corpus.split)?;

    // stage 2
    let bank = init_bank(cfg.m, cfg.d, derive_seed(cfg.seed, 0x2))?;
    let mut gen_trace = TrainTrace::new();
    let t1 = Instant::now();
    let gen_out = train_generator(
        &pools,
        &corpus.semantics,
        bank,
        &corpus.split,
        corpus.semantics.dim,
        cfg.d,
        cfg.h_g,
        &GeneratorTrainConfig {
            loss: gen_loss_config(cfg),
            lr: cfg.lr_generator,
            epochs: cfg.epochs_generator,
            clip_norm: cfg.clip_norm,
            n_generated: cfg.n_c,
            real_batch: cfg.real_batch,
            bank_trainable: cfg.lgp_trainable_step2,
            seed: derive_seed(cfg.seed, 0x3),
        },
        &mut gen_trace,
    )?;
    timings.generator_s = t1.elapsed().as_secs_f64();
    let mut generator = gen_out.params;
    generator.frozen = true;
    let mut bank = gen_out.bank;
    let generator_bits = bits_of(&generator.named_params());

    let mut freeze_violations = 0u64;
    if bits_of(&backbone.named_params()) != backbone_bits {
        freeze_violations += 1;
    }

    // stage 3
    let mut align_trace = TrainTrace::new();
    let mut align = None;
    if !cfg.no_alignment {
        let t2 = Instant::now();
        let bank_before_bits: Vec<u64> = bank.param.data.iter().map(|v| v.to_bits()).collect();
        let out = train_alignment(
            &all_seen,
            &corpus.semantics,
            &generator,
            bank,
            &corpus.split,
            &AlignTrainConfig {
                tau2: cfg.tau2,
                lr: cfg.lr_alignment,
                epochs: cfg.epochs_alignment,
                clip_norm: cfg.clip_norm,
                batch_points: cfg.align_batch,
                synthetic_per_class: cfg.n_c,
                similarity: cfg.similarity,
                gen_loss: gen_loss_config(cfg),
                seed: derive_seed(cfg.seed, 0x4),
            },
            &mut align_trace,
        )?;
        timings.alignment_s = t2.elapsed().as_secs_f64();
        bank = out.bank;
        let mut align_params = out.params;
        align_params.frozen = true;
        align = Some(align_params);
        // the bank is supposed to move in stage 3; only the backbone and
        // generator freezes are contractual
        let bank_after_bits: Vec<u64> = bank.param.data.iter().map(|v| v.to_bits()).collect();
        debug_assert!(
            cfg.epochs_alignment == 0 || bank_before_bits != bank_after_bits,
            "bank did not move during alignment"
        );
    }
    if bits_of(&backbone.named_params()) != backbone_bits {
        freeze_violations += 1;
    }
    if bits_of(&generator.named_params()) != generator_bits {
        freeze_violations += 1;
    }

    Ok((
        TrainedModel {
            backbone,
            generator,
            align,
            bank,
        },
        RunTraces {
            pretrain: pre_trace,
            generator: gen_trace,
            alignment: align_trace,
            pretrain_accuracy: pre.accuracy,
            freeze_violations,
            timings,
        },
    ))
}

/// Evaluation artifacts beyond the scalar report: per-class mean prototype
/// distributions for both modalities (rows of length M).
pub struct EvalDetails {
    pub report: EvalReport,
    pub visual_class_means: Vec<Vec<f64>>,
    pub semantic_dists: Vec<f64>,
    pub m: usize,
}

/// Runs encode -> re-represent -> classify over the test scenes and fills
/// the report. `zsl_trivial` restricts prediction to seen classes;
/// `no_alignment` falls back to similarity between raw features and
/// projected semantics.
pub fn evaluate_model(
    model: &TrainedModel,
    corpus: &Corpus,
    cfg: &ExperimentConfig,
) -> Result<EvalDetails, PipelineError> {
    let n_classes = corpus.split.n_classes();
    let allowed: Option<Vec<usize>> = if cfg.zsl_trivial {
        Some(corpus.split.seen.clone())
    } else {
        None
    };

    let mut confusion = vec![vec![0u64; n_classes]; n_classes];
    let m = model.bank.m;
    let mut visual_sums = vec![vec![0.0f64; m]; n_classes];
    let mut visual_counts = vec![0u64; n_classes];
    let mut entropy_visual_sum = 0.0;
    let mut entropy_rows = 0u64;

    let projected = project_semantics(&corpus.semantics, &model.generator)?;

    // semantic-side distributions (only defined when alignment exists)
    let (semantic_dists, entropy_semantic) = match &model.align {
        Some(align) => {
            let dists = rerepresent_values(
                &projected,
                n_classes,
                model.bank.d,
                &model.bank,
                &align.sigma,
                &align.theta,
            )?;
            let h = lgp_entropy(&dists, n_classes, m);
            (dists, h)
        }
        None => (vec![0.0; n_classes * m], 0.0),
    };

    for scene in &corpus.test {
        let fs = encode(scene, &model.backbone)?;
        let preds = match &model.align {
            Some(align) => {
                let dists = rerepresent_values(
                    &fs.features,
                    fs.n,
                    fs.dim,
                    &model.bank,
                    &align.psi,
                    &align.phi,
                )?;
                entropy_visual_sum += lgp_entropy(&dists, fs.n, m) * fs.n as f64;
                entropy_rows += fs.n as u64;
                for i in 0..fs.n {
                    let label = fs.labels[i];
                    visual_counts[label] += 1;
                    for j in 0..m {
                        visual_sums[label][j] += dists[i * m + j];
                    }
                }
                classify(
                    &dists,
                    fs.n,
                    &semantic_dists,
                    n_classes,
                    m,
                    cfg.similarity,
                    allowed.as_deref(),
                )
            }
            None => {
                // projected-semantics fallback: similarity in feature space
                classify(
                    &fs.features,
                    fs.n,
                    &projected,
                    n_classes,
                    fs.dim,
                    match cfg.similarity {
                        SimilarityKind::Bhattacharyya => SimilarityKind::Cosine,
                        other => other,
                    },
                    allowed.as_deref(),
                )
            }
        };
        for (i, &pred) in preds.iter().enumerate() {
            confusion[fs.labels[i]][pred] += 1;
        }
    }

    let entropy_visual = if entropy_rows > 0 {
        entropy_visual_sum / entropy_rows as f64
    } else {
        0.0
    };
    let report = build_report(
        confusion,
        &corpus.split,
        cfg.iou_averaging,
        entropy_visual,
        entropy_semantic,
    );
    let visual_class_means = visual_sums
        .into_iter()
        .zip(&visual_counts)
        .map(|(sums, &count)| {
            if count == 0 {
                vec![0.0; m]
            } else {
                sums.into_iter().map(|s| s / count as f64).collect()
            }
        })
        .collect();
    Ok(EvalDetails {
        report,
        visual_class_means,
        semantic_dists,
        m,
    })
}

// ---------------------------------------------------------------------------
// on-disk layout and staged commands
// ---------------------------------------------------------------------------

/// Directory layout of one run root.
#[derive(Clone, Debug)]
pub struct OutputLayout {
    pub root: PathBuf,
}

impl OutputLayout {
    pub fn new(root: impl Into<PathBuf>) -> OutputLayout {
        OutputLayout { root: root.into() }
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }
    pub fn checkpoints_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn eval_dir(&self) -> PathBuf {
        self.root.join("eval")
    }
    pub fn backbone_ckpt(&self) -> PathBuf {
        self.checkpoints_dir().join("backbone.ckpt")
    }
    pub fn generator_ckpt(&self) -> PathBuf {
        self.checkpoints_dir().join("generator.ckpt")
    }
    pub fn alignment_ckpt(&self) -> PathBuf {
        self.checkpoints_dir().join("alignment.ckpt")
    }
    pub fn bank_ckpt(&self) -> PathBuf {
        self.checkpoints_dir().join("bank.ckpt")
    }
}

pub fn save_backbone(path: &Path, p: &BackboneParams) -> Result<(), CheckpointError> {
    save_params(path, &p.named_params())
}

pub fn load_backbone(path: &Path, cfg: &ExperimentConfig, n_seen: usize) -> Result<BackboneParams, CheckpointError> {
    let mut tensors = load_params(path)?;
    let (h, d, k) = (cfg.h, cfg.d, cfg.k);
    Ok(BackboneParams {
        w1: take_tensor(path, &mut tensors, "backbone.w1", (3, h))?,
        b1: take_tensor(path, &mut tensors, "backbone.b1", (1, h))?,
        w2: take_tensor(path, &mut tensors, "backbone.w2", (h, h))?,
        b2: take_tensor(path, &mut tensors, "backbone.b2", (1, h))?,
        post_w1: take_tensor(path, &mut tensors, "backbone.post_w1", (2 * h, h))?,
        post_b1: take_tensor(path, &mut tensors, "backbone.post_b1", (1, h))?,
        post_w2: take_tensor(path, &mut tensors, "backbone.post_w2", (h, d))?,
        post_b2: take_tensor(path, &mut tensors, "backbone.post_b2", (1, d))?,
        cls_w: take_tensor(path, &mut tensors, "backbone.cls_w", (d, n_seen))?,
        cls_b: take_tensor(path, &mut tensors, "backbone.cls_b", (1, n_seen))?,
        hidden: h,
        feat_dim: d,
        k,
        frozen: true,
    })
}

pub fn save_generator(path: &Path, p: &GeneratorParams) -> Result<(), CheckpointError> {
    save_params(path, &p.named_params())
}

pub fn load_generator(path: &Path, cfg: &ExperimentConfig, d_t: usize) -> Result<GeneratorParams, CheckpointError> {
    let mut tensors = load_params(path)?;
    let (d, h_g) = (cfg.d, cfg.h_g);
    Ok(GeneratorParams {
        proj_w: take_tensor(path, &mut tensors, "generator.proj_w", (d_t, d))?,
        proj_b: take_tensor(path, &mut tensors, "generator.proj_b", (1, d))?,
        attn: CrossAttention {
            wq: take_tensor(path, &mut tensors, "attn.wq", (d, d))?,
            wk: take_tensor(path, &mut tensors, "attn.wk", (d, d))?,
            wv: take_tensor(path, &mut tensors, "attn.wv", (d, d))?,
            wo: take_tensor(path, &mut tensors, "attn.wo", (d, d))?,
            d,
        },
        gen_w1: take_tensor(path, &mut tensors, "generator.gen_w1", (d, h_g))?,
        gen_b1: take_tensor(path, &mut tensors, "generator.gen_b1", (1, h_g))?,
        gen_w2: take_tensor(path, &mut tensors, "generator.gen_w2", (h_g, d))?,
        gen_b2: take_tensor(path, &mut tensors, "generator.gen_b2", (1, d))?,
        d_t,
        d,
        hidden: h_g,
        frozen: true,
    })
}

pub fn save_alignment(path: &Path, p: &AlignParams) -> Result<(), CheckpointError> {
    save_params(path, &p.named_params())
}

pub fn load_alignment(path: &Path, cfg: &ExperimentConfig) -> Result<AlignParams, CheckpointError> {
    let mut tensors = load_params(path)?;
    let d = cfg.d;
    Ok(AlignParams {
        psi: take_tensor(path, &mut tensors, "align.psi", (d, d))?,
        phi: take_tensor(path, &mut tensors, "align.phi", (d, d))?,
        sigma: take_tensor(path, &mut tensors, "align.sigma", (d, d))?,
        theta: take_tensor(path, &mut tensors, "align.theta", (d, d))?,
        tau2: cfg.tau2,
        d,
        frozen: true,
    })
}

pub fn save_bank(path: &Path, bank: &LgpBank) -> Result<(), CheckpointError> {
    save_params(path, &[&bank.param])
}

pub fn load_bank(path: &Path, cfg: &ExperimentConfig) -> Result<LgpBank, CheckpointError> {
    let mut tensors = load_params(path)?;
    let param = take_tensor(path, &mut tensors, "lgp.bank", (cfg.m, cfg.d))?;
    Ok(LgpBank {
        param,
        m: cfg.m,
        d: cfg.d,
    })
}

/// `synth`: writes the corpus directory and its manifest.
pub fn cmd_synth(
    cfg: &ExperimentConfig,
    layout: &OutputLayout,
    force: bool,
) -> Result<RunManifest, PipelineError> {
    let corpus = build_corpus(cfg)?;
    let t0 = Instant::now();
    let mut all_scenes: Vec<&SceneSample> = corpus.train.iter().collect();
    all_scenes.extend(corpus.test.iter());
    let owned: Vec<SceneSample> = all_scenes.into_iter().cloned().collect();
    let written = write_corpus(
        &layout.corpus_dir(),
        &owned,
        &corpus.class_names,
        &corpus.split,
        &corpus.semantics,
        force,
    )?;
    let mut manifest = RunManifest::new("synth");
    manifest.put("seed", cfg.seed);
    manifest.put_config(&cfg.to_key_values());
    manifest.put("inputs_hash", format!("{:016x}", hash_files(&written)?));
    manifest.add_artifacts(&written);
    manifest.add_timing("synth", t0.elapsed().as_secs_f64());
    let manifest_path = manifest.write(&layout.root)?;
    let _ = manifest_path;
    Ok(manifest)
}

/// Which training stages `cmd_train` runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrainStage {
    Pretrain,
    Generator,
    Alignment,
    All,
}

impl TrainStage {
    pub fn parse(s: &str) -> Option<TrainStage> {
        match s {
            "pretrain" => Some(TrainStage::Pretrain),
            "generator" => Some(TrainStage::Generator),
            "alignment" => Some(TrainStage::Alignment),
            "all" => Some(TrainStage::All),
            _ => None,
        }
    }
}

/// `train`: runs the requested stage(s), reading prerequisites from disk
/// and writing checkpoints, stage logs, and the manifest.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    layout: &OutputLayout,
    stage: TrainStage,
) -> Result<RunManifest, PipelineError> {
    let corpus_dir = layout.corpus_dir();
    if !corpus_dir.exists() {
        return Err(PipelineError::MissingStage {
            needed: "synth",
            hint: format!("run `zshot synth` first (no corpus at {})", corpus_dir.display()),
        });
    }
    let corpus = corpus_from_disk(&corpus_dir, cfg)?;
    let mut manifest = RunManifest::new("train");
    manifest.put("seed", cfg.seed);
    manifest.put("stage", format!("{stage:?}").to_lowercase());
    manifest.put_config(&cfg.to_key_values());

    match stage {
        TrainStage::All => {
            let (model, traces) = train_all(&corpus, cfg)?;
            write_stage_outputs(layout, &model, &traces, &mut manifest)?;
            manifest.put("pretrain_accuracy", traces.pretrain_accuracy);
            manifest.put("freeze_violations", traces.freeze_violations);
        }
        TrainStage::Pretrain => {
            let mut trace = TrainTrace::new();
            let t0 = Instant::now();
            let out = pretrain(
                &corpus.train,
                &corpus.split,
                &PretrainConfig {
                    hidden: cfg.h,
                    feat_dim: cfg.d,
                    k: cfg.k,
                    lr: cfg.lr_pretrain,
                    epochs: cfg.epochs_pretrain,
                    clip_norm: cfg.clip_norm,
                    seed: derive_seed(cfg.seed, 0x1),
                },
                &mut trace,
            )?;
            let mut backbone = out.params;
            backbone.frozen = true;
            standardize_backbone(&corpus, &mut backbone)?;
            save_backbone(&layout.backbone_ckpt(), &backbone)?;
            write_log(layout, "pretrain_train.csv", &trace, &mut manifest)?;
            manifest.add_artifact(&layout.backbone_ckpt());
            manifest.add_timing("pretrain", t0.elapsed().as_secs_f64());
            manifest.put("pretrain_accuracy", out.accuracy);
        }
        TrainStage::Generator => {
            let backbone_path = layout.backbone_ckpt();
            if !backbone_path.exists() {
                return Err(PipelineError::MissingStage {
                    needed: "pretrain",
                    hint: "run `zshot train --stage pretrain` first".into(),
                });
            }
            let backbone = load_backbone(&backbone_path, cfg, corpus.split.seen.len())?;
            let (pools, _) = build_class_pools(&corpus.train, &backbone, &corpus.split)?;
            let bank = init_bank(cfg.m, cfg.d, derive_seed(cfg.seed, 0x2))?;
            let mut trace = TrainTrace::new();
            let t0 = Instant::now();
            let out = train_generator(
                &pools,
                &corpus.semantics,
                bank,
                &corpus.split,
                corpus.semantics.dim,
                cfg.d,
                cfg.h_g,
                &GeneratorTrainConfig {
                    loss: gen_loss_config(cfg),
                    lr: cfg.lr_generator,
                    epochs: cfg.epochs_generator,
                    clip_norm: cfg.clip_norm,
                    n_generated: cfg.n_c,
                    real_batch: cfg.real_batch,
                    bank_trainable: cfg.lgp_trainable_step2,
                    seed: derive_seed(cfg.seed, 0x3),
                },
                &mut trace,
            )?;
            let mut generator = out.params;
            generator.frozen = true;
            save_generator(&layout.generator_ckpt(), &generator)?;
            save_bank(&layout.bank_ckpt(), &out.bank)?;
            write_log(layout, "gen_train.csv", &trace, &mut manifest)?;
            manifest.add_artifact(&layout.generator_ckpt());
            manifest.add_artifact(&layout.bank_ckpt());
            manifest.add_timing("generator", t0.elapsed().as_secs_f64());
        }
        TrainStage::Alignment => {
            let backbone_path = layout.backbone_ckpt();
            let generator_path = layout.generator_ckpt();
            if !backbone_path.exists() {
                return Err(PipelineError::MissingStage {
                    needed: "pretrain",
                    hint: "run `zshot train --stage pretrain` first".into(),
                });
            }
            if !generator_path.exists() || !layout.bank_ckpt().exists() {
                return Err(PipelineError::MissingStage {
                    needed: "generator",
                    hint: "run `zshot train --stage generator` first".into(),
                });
            }
            let backbone = load_backbone(&backbone_path, cfg, corpus.split.seen.len())?;
            let generator = load_generator(&generator_path, cfg, corpus.semantics.dim)?;
            let bank = load_bank(&layout.bank_ckpt(), cfg)?;
            let (_, all_seen) = build_class_pools(&corpus.train, &backbone, &corpus.split)?;
            let mut trace = TrainTrace::new();
            let t0 = Instant::now();
            let out = train_alignment(
                &all_seen,
                &corpus.semantics,
                &generator,
                bank,
                &corpus.split,
                &AlignTrainConfig {
                    tau2: cfg.tau2,
                    lr: cfg.lr_alignment,
                    epochs: cfg.epochs_alignment,
                    clip_norm: cfg.clip_norm,
                    batch_points: cfg.align_batch,
                    synthetic_per_class: cfg.n_c,
                    similarity: cfg.similarity,
                    gen_loss: gen_loss_config(cfg),
                    seed: derive_seed(cfg.seed, 0x4),
                },
                &mut trace,
            )?;
            let mut align = out.params;
            align.frozen = true;
            save_alignment(&layout.alignment_ckpt(), &align)?;
            save_bank(&layout.bank_ckpt(), &out.bank)?;
            write_log(layout, "align_train.csv", &trace, &mut manifest)?;
            manifest.add_artifact(&layout.alignment_ckpt());
            manifest.add_artifact(&layout.bank_ckpt());
            manifest.add_timing("alignment", t0.elapsed().as_secs_f64());
        }
    }
    manifest.write(&layout.root)?;
    Ok(manifest)
}

fn write_stage_outputs(
    layout: &OutputLayout,
    model: &TrainedModel,
    traces: &RunTraces,
    manifest: &mut RunManifest,
) -> Result<(), PipelineError> {
    save_backbone(&layout.backbone_ckpt(), &model.backbone)?;
    save_generator(&layout.generator_ckpt(), &model.generator)?;
    save_bank(&layout.bank_ckpt(), &model.bank)?;
    manifest.add_artifact(&layout.backbone_ckpt());
    manifest.add_artifact(&layout.generator_ckpt());
    manifest.add_artifact(&layout.bank_ckpt());
    if let Some(align) = &model.align {
        save_alignment(&layout.alignment_ckpt(), align)?;
        manifest.add_artifact(&layout.alignment_ckpt());
    }
    write_log(layout, "pretrain_train.csv", &traces.pretrain, manifest)?;
    write_log(layout, "gen_train.csv", &traces.generator, manifest)?;
    if !traces.alignment.epochs.is_empty() {
        write_log(layout, "align_train.csv", &traces.alignment, manifest)?;
    }
    // offline-analysis export of the bank
    let bank_csv = layout.root.join("lgp_bank.csv");
    std::fs::write(&bank_csv, model.bank.to_csv()).map_err(DataError::Io)?;
    manifest.add_artifact(&bank_csv);
    manifest.add_timing("pretrain", traces.timings.pretrain_s);
    manifest.add_timing("generator", traces.timings.generator_s);
    manifest.add_timing("alignment", traces.timings.alignment_s);
    Ok(())
}

fn write_log(
    layout: &OutputLayout,
    file: &str,
    trace: &TrainTrace,
    manifest: &mut RunManifest,
) -> Result<(), PipelineError> {
    std::fs::create_dir_all(&layout.root).map_err(DataError::Io)?;
    let path = layout.root.join(file);
    std::fs::write(&path, trace.to_csv()).map_err(DataError::Io)?;
    manifest.add_artifact(&path);
    Ok(())
}

/// Loads the full model back from a run directory.
pub fn load_model(
    layout: &OutputLayout,
    cfg: &ExperimentConfig,
    corpus: &Corpus,
) -> Result<TrainedModel, PipelineError> {
    let backbone_path = layout.backbone_ckpt();
    if !backbone_path.exists() {
        return Err(PipelineError::MissingStage {
            needed: "pretrain",
            hint: "train before evaluating".into(),
        });
    }
    let generator_path = layout.generator_ckpt();
    if !generator_path.exists() {
        return Err(PipelineError::MissingStage {
            needed: "generator",
            hint: "train before evaluating".into(),
        });
    }
    let backbone = load_backbone(&backbone_path, cfg, corpus.split.seen.len())?;
    let generator = load_generator(&generator_path, cfg, corpus.semantics.dim)?;
    let bank = load_bank(&layout.bank_ckpt(), cfg)?;
    let align = if cfg.no_alignment {
        None
    } else {
        let align_path = layout.alignment_ckpt();
        if !align_path.exists() {
            return Err(PipelineError::MissingStage {
                needed: "alignment",
                hint: "run `zshot train --stage alignment` first".into(),
            });
        }
        Some(load_alignment(&align_path, cfg)?)
    };
    Ok(TrainedModel {
        backbone,
        generator,
        align,
        bank,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// A configuration small enough for unit tests while keeping every
    /// stage and contract active.
    pub(crate) fn tiny_config(seed: u64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.seed = seed;
        cfg.train_scenes = 6;
        cfg.test_scenes = 2;
        cfg.points_per_scene = 128;
        cfg.d_t = 16;
        cfg.d = 12;
        cfg.h = 16;
        cfg.k = 8;
        cfg.m = 8;
        cfg.h_g = 16;
        cfg.n_c = 48;
        cfg.real_batch = 64;
        cfg.align_batch = 256;
        cfg.epochs_pretrain = 3;
        cfg.epochs_generator = 4;
        cfg.epochs_alignment = 6;
        cfg
    }

    #[test]
    fn train_all_runs_and_respects_freezes() {
        let cfg = tiny_config(5);
        let corpus = build_corpus(&cfg).unwrap();
        let (model, traces) = train_all(&corpus, &cfg).unwrap();
        assert_eq!(traces.freeze_violations, 0);
        assert_eq!(traces.pretrain.mask_violations, 0);
        assert_eq!(traces.generator.mask_violations, 0);
        assert_eq!(traces.alignment.mask_violations, 0);
        assert!(model.align.is_some());
        assert!(model.backbone.frozen);
        assert!(model.generator.frozen);
        // each stage logged every epoch
        assert_eq!(traces.pretrain.epochs.len(), cfg.epochs_pretrain);
        assert_eq!(traces.generator.epochs.len(), cfg.epochs_generator);
        assert_eq!(traces.alignment.epochs.len(), cfg.epochs_alignment);
    }

    #[test]
    fn bank_moves_during_stage3_when_trainable() {
        let cfg = tiny_config(7);
        let corpus = build_corpus(&cfg).unwrap();
        let initial_bank = init_bank(cfg.m, cfg.d, derive_seed(cfg.seed, 0x2)).unwrap();
        let (model, _) = train_all(&corpus, &cfg).unwrap();
        assert_ne!(
            initial_bank.param.data, model.bank.param.data,
            "bank never updated"
        );
    }

    #[test]
    fn evaluation_is_deterministic_and_consistent() {
        let cfg = tiny_config(11);
        let corpus = build_corpus(&cfg).unwrap();
        let (model, _) = train_all(&corpus, &cfg).unwrap();
        let a = evaluate_model(&model, &corpus, &cfg).unwrap();
        let b = evaluate_model(&model, &corpus, &cfg).unwrap();
        assert_eq!(a.report.confusion, b.report.confusion);
        assert_eq!(a.report.hmiou.to_bits(), b.report.hmiou.to_bits());
        // internal consistency
        let recomputed = crate::metrics::hmiou(a.report.miou_seen, a.report.miou_unseen);
        assert!((a.report.hmiou - recomputed).abs() < 1e-15);
    }

    #[test]
    fn zsl_trivial_mode_zeroes_unseen_miou() {
        let mut cfg = tiny_config(13);
        let corpus = build_corpus(&cfg).unwrap();
        let (model, _) = train_all(&corpus, &cfg).unwrap();
        cfg.zsl_trivial = true;
        let details = evaluate_model(&model, &corpus, &cfg).unwrap();
        assert_eq!(details.report.miou_unseen, 0.0);
    }

    #[test]
    fn no_alignment_mode_skips_stage3_and_still_evaluates() {
        let mut cfg = tiny_config(17);
        cfg.no_alignment = true;
        let corpus = build_corpus(&cfg).unwrap();
        let (model, traces) = train_all(&corpus, &cfg).unwrap();
        assert!(model.align.is_none());
        assert!(traces.alignment.epochs.is_empty());
        let details = evaluate_model(&model, &corpus, &cfg).unwrap();
        assert_eq!(details.report.entropy_visual, 0.0);
        assert!(details.report.n_points > 0);
    }

    #[test]
    fn staged_training_requires_prerequisites() {
        let cfg = tiny_config(19);
        let dir = std::env::temp_dir().join(format!("zshot_stage_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        let layout = OutputLayout::new(&dir);
        // no corpus yet
        match cmd_train(&cfg, &layout, TrainStage::Pretrain) {
            Err(PipelineError::MissingStage { needed, .. }) => assert_eq!(needed, "synth"),
            other => panic!("expected missing synth, got {:?}", other.is_ok()),
        }
        cmd_synth(&cfg, &layout, false).unwrap();
        // alignment before generator
        match cmd_train(&cfg, &layout, TrainStage::Alignment) {
            Err(PipelineError::MissingStage { needed, .. }) => assert_eq!(needed, "pretrain"),
            other => panic!("expected missing pretrain, got {:?}", other.is_ok()),
        }
        cmd_train(&cfg, &layout, TrainStage::Pretrain).unwrap();
        match cmd_train(&cfg, &layout, TrainStage::Alignment) {
            Err(PipelineError::MissingStage { needed, .. }) => assert_eq!(needed, "generator"),
            other => panic!("expected missing generator, got {:?}", other.is_ok()),
        }
        cmd_train(&cfg, &layout, TrainStage::Generator).unwrap();
        cmd_train(&cfg, &layout, TrainStage::Alignment).unwrap();
        // model loads completely
        let corpus = corpus_from_disk(&layout.corpus_dir(), &cfg).unwrap();
        let model = load_model(&layout, &cfg, &corpus).unwrap();
        assert!(model.align.is_some());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn staged_and_monolithic_checkpoints_match() {
        // `train --stage pretrain,generator,alignment` in sequence must equal
        // `train --stage all` bit for bit
        let cfg = tiny_config(23);
        let base = std::env::temp_dir().join(format!("zshot_equiv_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&base);
        let staged = OutputLayout::new(base.join("staged"));
        let mono = OutputLayout::new(base.join("mono"));
        cmd_synth(&cfg, &staged, false).unwrap();
        cmd_synth(&cfg, &mono, false).unwrap();
        cmd_train(&cfg, &staged, TrainStage::Pretrain).unwrap();
        cmd_train(&cfg, &staged, TrainStage::Generator).unwrap();
        cmd_train(&cfg, &staged, TrainStage::Alignment).unwrap();
        cmd_train(&cfg, &mono, TrainStage::All).unwrap();
        for file in ["backbone.ckpt", "generator.ckpt", "alignment.ckpt", "bank.ckpt"] {
            let a = std::fs::read(staged.checkpoints_dir().join(file)).unwrap();
            let b = std::fs::read(mono.checkpoints_dir().join(file)).unwrap();
            assert_eq!(a, b, "{file} differs between staged and monolithic runs");
        }
        std::fs::remove_dir_all(&base).unwrap();
    }
}
