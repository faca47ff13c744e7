//! Ablation and sweep suites: run configuration variants over several
//! seeds and aggregate the headline metrics as mean and standard deviation.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::ExperimentConfig;
use crate::data::{default_class_defs, synth_semantic_embeddings, DataError};
use crate::pipeline::{build_corpus, evaluate_model, train_all, PipelineError};
use crate::rng::derive_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Lgp,
    SelfLoss,
    Alignment,
    MSweep,
    Embeddings,
}

impl Suite {
    pub fn parse(s: &str) -> Option<Suite> {
        match s {
            "lgp" => Some(Suite::Lgp),
            "self_loss" => Some(Suite::SelfLoss),
            "alignment" => Some(Suite::Alignment),
            "m_sweep" => Some(Suite::MSweep),
            "embeddings" => Some(Suite::Embeddings),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Suite::Lgp => "lgp",
            Suite::SelfLoss => "self_loss",
            Suite::Alignment => "alignment",
            Suite::MSweep => "m_sweep",
            Suite::Embeddings => "embeddings",
        }
    }
}

/// Aggregated metrics of one variant over all its seeds (percent scale).
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: String,
    pub seeds: usize,
    pub miou_seen: (f64, f64),
    pub miou_unseen: (f64, f64),
    pub miou_all: (f64, f64),
    pub hmiou: (f64, f64),
}

impl fmt::Display for AblationRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<24} seen {:5.1} ± {:4.1}  unseen {:5.1} ± {:4.1}  all {:5.1} ± {:4.1}  hmiou {:5.1} ± {:4.1}",
            self.variant,
            self.miou_seen.0,
            self.miou_seen.1,
            self.miou_unseen.0,
            self.miou_unseen.1,
            self.miou_all.0,
            self.miou_all.1,
            self.hmiou.0,
            self.hmiou.1
        )
    }
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs one variant across seeds, returning percent-scale aggregates.
pub fn run_variant(
    label: &str,
    cfg: &ExperimentConfig,
    seeds: &[u64],
) -> Result<AblationRow, PipelineError> {
    let mut seen = Vec::new();
    let mut unseen = Vec::new();
    let mut all = Vec::new();
    let mut hm = Vec::new();
    for &seed in seeds {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = seed;
        let corpus = build_corpus(&run_cfg)?;
        let (model, _) = train_all(&corpus, &run_cfg)?;
        let details = evaluate_model(&model, &corpus, &run_cfg)?;
        seen.push(details.report.miou_seen * 100.0);
        unseen.push(details.report.miou_unseen * 100.0);
        all.push(details.report.miou_all * 100.0);
        hm.push(details.report.hmiou * 100.0);
    }
    Ok(AblationRow {
        variant: label.to_string(),
        seeds: seeds.len(),
        miou_seen: mean_std(&seen),
        miou_unseen: mean_std(&unseen),
        miou_all: mean_std(&all),
        hmiou: mean_std(&hm),
    })
}

/// Writes two synthetic word-vector files (one per "vocabulary") keyed by
/// class name, for the embedding-choice suite. Each file carries half the
/// configured semantic dimension.
pub fn write_embedding_ablation_files(
    dir: &Path,
    d_each: usize,
    seed: u64,
) -> Result<(PathBuf, PathBuf), DataError> {
    fs::create_dir_all(dir)?;
    let defs = default_class_defs();
    let names: Vec<String> = defs.iter().map(|d| d.name.clone()).collect();
    let mut paths = Vec::new();
    for (tag, stream) in [("vectors_a.txt", 0xE1u64), ("vectors_b.txt", 0xE2u64)] {
        let table = synth_semantic_embeddings(&defs, d_each, 0.02, derive_seed(seed, stream))?;
        let mut body = String::new();
        for (name, vec) in names.iter().zip(&table.vectors) {
            body.push_str(name);
            for v in vec {
                body.push(' ');
                body.push_str(&v.to_string());
            }
            body.push('\n');
        }
        let path = dir.join(tag);
        fs::write(&path, body)?;
        paths.push(path);
    }
    Ok((paths.remove(0), paths.remove(0)))
}

/// The variants of each suite, as (label, config) pairs.
pub fn suite_variants(
    suite: Suite,
    base: &ExperimentConfig,
    scratch_dir: &Path,
) -> Result<Vec<(String, ExperimentConfig)>, PipelineError> {
    let mut variants = Vec::new();
    match suite {
        Suite::Lgp => {
            variants.push(("full".to_string(), base.clone()));
            let mut ablated = base.clone();
            ablated.no_lgp_in_generator = true;
            variants.push(("generator_without_lgps".to_string(), ablated));
        }
        Suite::SelfLoss => {
            variants.push(("full".to_string(), base.clone()));
            let mut ablated = base.clone();
            ablated.no_self_loss = true;
            variants.push(("without_self_loss".to_string(), ablated));
        }
        Suite::Alignment => {
            variants.push(("full".to_string(), base.clone()));
            let mut ablated = base.clone();
            ablated.no_alignment = true;
            variants.push(("without_alignment".to_string(), ablated));
        }
        Suite::MSweep => {
            for m in [8usize, 16, 32, 64] {
                let mut cfg = base.clone();
                cfg.m = m;
                variants.push((format!("m={m}"), cfg));
            }
        }
        Suite::Embeddings => {
            let (a, b) =
                write_embedding_ablation_files(scratch_dir, base.d_t / 2, base.seed)
                    .map_err(PipelineError::Data)?;
            variants.push(("synthetic".to_string(), base.clone()));
            let mut only_a = base.clone();
            only_a.embedding_files = vec![a.display().to_string()];
            variants.push(("vocabulary_a".to_string(), only_a));
            let mut only_b = base.clone();
            only_b.embedding_files = vec![b.display().to_string()];
            variants.push(("vocabulary_b".to_string(), only_b));
            let mut concat = base.clone();
            concat.embedding_files = vec![a.display().to_string(), b.display().to_string()];
            variants.push(("concatenated".to_string(), concat));
        }
    }
    Ok(variants)
}

/// Runs a whole suite. On a variant failure, the rows completed so far come
/// back with the error so a partial table can still be emitted.
pub fn run_suite(
    suite: Suite,
    base: &ExperimentConfig,
    seeds: &[u64],
    scratch_dir: &Path,
) -> Result<Vec<AblationRow>, (Vec<AblationRow>, PipelineError)> {
    let variants = match suite_variants(suite, base, scratch_dir) {
        Ok(v) => v,
        Err(e) => return Err((Vec::new(), e)),
    };
    let mut rows = Vec::new();
    for (label, cfg) in variants {
        match run_variant(&label, &cfg, seeds) {
            Ok(row) => rows.push(row),
            Err(e) => return Err((rows, e)),
        }
    }
    Ok(rows)
}

pub fn render_table_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(
        "variant,seeds,miou_seen_mean,miou_seen_std,miou_unseen_mean,miou_unseen_std,miou_all_mean,miou_all_std,hmiou_mean,hmiou_std\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.variant,
            r.seeds,
            r.miou_seen.0,
            r.miou_seen.1,
            r.miou_unseen.0,
            r.miou_unseen.1,
            r.miou_all.0,
            r.miou_all.1,
            r.hmiou.0,
            r.hmiou.1
        ));
    }
    out
}
