//! Experiment configuration: flat key=value files with override support.

use std::fs;
use std::path::Path;

use crate::data::DataError;
use crate::generator::SimilarityKind;
use crate::metrics::IouAveraging;

/// Every knob of a run. Defaults define the desk-scale experiment:
/// 8 classes (6 seen / 2 unseen), 40 train + 10 test scenes of 512 points,
/// feature dimension 32, 16 prototypes.
#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub seed: u64,
    // corpus
    pub unseen: usize,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub points_per_scene: usize,
    pub d_t: usize,
    pub sem_noise: f64,
    /// Optional word-vector files (comma-separated); when set they replace
    /// the synthetic semantic embeddings and concatenate along features.
    pub embedding_files: Vec<String>,
    // model
    pub d: usize,
    pub h: usize,
    pub k: usize,
    pub m: usize,
    pub h_g: usize,
    // losses
    pub tau1: f64,
    pub tau2: f64,
    pub lambda1: f64,
    pub n_c: usize,
    pub n_k: usize,
    pub noise_scale: f64,
    pub semantic_jitter: f64,
    // optimization
    pub lr_pretrain: f64,
    pub lr_generator: f64,
    pub lr_alignment: f64,
    pub epochs_pretrain: usize,
    pub epochs_generator: usize,
    pub epochs_alignment: usize,
    pub clip_norm: f64,
    pub real_batch: usize,
    pub align_batch: usize,
    // ablations and modes
    pub no_lgp_in_generator: bool,
    pub no_self_loss: bool,
    pub no_alignment: bool,
    pub lgp_trainable_step2: bool,
    pub similarity: SimilarityKind,
    pub single_z: bool,
    pub iou_averaging: IouAveraging,
    pub zsl_trivial: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 42,
            unseen: 2,
            train_scenes: 40,
            test_scenes: 10,
            points_per_scene: 512,
            d_t: 32,
            sem_noise: 0.05,
            embedding_files: Vec::new(),
            d: 32,
            h: 64,
            k: 16,
            m: 16,
            h_g: 64,
            tau1: 0.5,
            tau2: 0.2,
            lambda1: 1.0,
            n_c: 256,
            n_k: 0,
            noise_scale: 1.0,
            semantic_jitter: 0.05,
            lr_pretrain: 0.01,
            lr_generator: 0.002,
            lr_alignment: 0.01,
            epochs_pretrain: 25,
            epochs_generator: 30,
            epochs_alignment: 60,
            clip_norm: 5.0,
            real_batch: 256,
            align_batch: 4096,
            no_lgp_in_generator: false,
            no_self_loss: false,
            no_alignment: false,
            lgp_trainable_step2: true,
            similarity: SimilarityKind::Cosine,
            single_z: false,
            iou_averaging: IouAveraging::ExcludeAbsent,
            zsl_trivial: false,
        }
    }
}

impl ExperimentConfig {
    /// Parses a flat `key=value` file; `#` starts a comment.
    pub fn from_file(path: &Path) -> Result<ExperimentConfig, DataError> {
        let text = fs::read_to_string(path)?;
        let mut cfg = ExperimentConfig::default();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| DataError::Format {
                path: path.display().to_string(),
                detail: format!("line {}: expected key=value, got `{raw}`", line_no + 1),
            })?;
            cfg.set(key.trim(), value.trim()).map_err(|e| DataError::Format {
                path: path.display().to_string(),
                detail: format!("line {}: {e}", line_no + 1),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one override. Unknown keys and malformed values error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), DataError> {
        let bad = |what: &str| DataError::Config(format!("key `{key}`: {what} (got `{value}`)"));
        macro_rules! parse {
            ($ty:ty) => {
                value.parse::<$ty>().map_err(|_| bad(concat!("expected ", stringify!($ty))))?
            };
        }
        match key {
            "seed" => self.seed = parse!(u64),
            "unseen" => self.unseen = parse!(usize),
            "train_scenes" => self.train_scenes = parse!(usize),
            "test_scenes" => self.test_scenes = parse!(usize),
            "points_per_scene" => self.points_per_scene = parse!(usize),
            "d_t" => self.d_t = parse!(usize),
            "sem_noise" => self.sem_noise = parse!(f64),
            "embedding_files" => {
                self.embedding_files = if value.is_empty() {
                    Vec::new()
                } else {
                    value.split(',').map(|s| s.trim().to_string()).collect()
                }
            }
            "d" => self.d = parse!(usize),
            "h" => self.h = parse!(usize),
            "k" => self.k = parse!(usize),
            "m" => self.m = parse!(usize),
            "h_g" => self.h_g = parse!(usize),
            "tau1" => self.tau1 = parse!(f64),
            "tau2" => self.tau2 = parse!(f64),
            "lambda1" => self.lambda1 = parse!(f64),
            "n_c" => self.n_c = parse!(usize),
            "n_k" => self.n_k = parse!(usize),
            "noise_scale" => self.noise_scale = parse!(f64),
            "semantic_jitter" => self.semantic_jitter = parse!(f64),
            "lr_pretrain" => self.lr_pretrain = parse!(f64),
            "lr_generator" => self.lr_generator = parse!(f64),
            "lr_alignment" => self.lr_alignment = parse!(f64),
            "epochs_pretrain" => self.epochs_pretrain = parse!(usize),
            "epochs_generator" => self.epochs_generator = parse!(usize),
            "epochs_alignment" => self.epochs_alignment = parse!(usize),
            "clip_norm" => self.clip_norm = parse!(f64),
            "real_batch" => self.real_batch = parse!(usize),
            "align_batch" => self.align_batch = parse!(usize),
            "no_lgp_in_generator" => self.no_lgp_in_generator = parse!(bool),
            "no_self_loss" => self.no_self_loss = parse!(bool),
            "no_alignment" => self.no_alignment = parse!(bool),
            "lgp_trainable_step2" => self.lgp_trainable_step2 = parse!(bool),
            "similarity" => {
                self.similarity =
                    SimilarityKind::parse(value).ok_or_else(|| bad("expected cosine|dot|bhattacharyya"))?
            }
            "single_z" => self.single_z = parse!(bool),
            "iou_averaging" => {
                self.iou_averaging =
                    IouAveraging::parse(value).ok_or_else(|| bad("expected exclude|zero"))?
            }
            "zsl_trivial" => self.zsl_trivial = parse!(bool),
            _ => return Err(DataError::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let positive = [
            ("tau1", self.tau1),
            ("tau2", self.tau2),
            ("lr_pretrain", self.lr_pretrain),
            ("lr_generator", self.lr_generator),
            ("lr_alignment", self.lr_alignment),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(DataError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.lambda1 < 0.0 {
            return Err(DataError::Config(format!(
                "lambda1 must be non-negative, got {}",
                self.lambda1
            )));
        }
        if self.sem_noise < 0.0 || self.noise_scale < 0.0 {
            return Err(DataError::Config("noise scales must be non-negative".into()));
        }
        if self.unseen == 0 {
            return Err(DataError::Config("at least one unseen class is required".into()));
        }
        if self.train_scenes == 0 || self.test_scenes == 0 {
            return Err(DataError::Config("train and test scene counts must be positive".into()));
        }
        if self.n_k > self.n_c {
            return Err(DataError::Config(format!(
                "n_k ({}) cannot exceed n_c ({})",
                self.n_k, self.n_c
            )));
        }
        if self.m < 2 || self.d < 2 {
            return Err(DataError::Config("m and d must be at least 2".into()));
        }
        Ok(())
    }

    /// Serialized key=value view, fixed order; reparsing it reproduces the
    /// config exactly.
    pub fn to_key_values(&self) -> Vec<(String, String)> {
        let mut kv: Vec<(String, String)> = Vec::new();
        let mut push = |k: &str, v: String| kv.push((k.to_string(), v));
        push("seed", self.seed.to_string());
        push("unseen", self.unseen.to_string());
        push("train_scenes", self.train_scenes.to_string());
        push("test_scenes", self.test_scenes.to_string());
        push("points_per_scene", self.points_per_scene.to_string());
        push("d_t", self.d_t.to_string());
        push("sem_noise", self.sem_noise.to_string());
        push("embedding_files", self.embedding_files.join(","));
        push("d", self.d.to_string());
        push("h", self.h.to_string());
        push("k", self.k.to_string());
        push("m", self.m.to_string());
        push("h_g", self.h_g.to_string());
        push("tau1", self.tau1.to_string());
        push("tau2", self.tau2.to_string());
        push("lambda1", self.lambda1.to_string());
        push("n_c", self.n_c.to_string());
        push("n_k", self.n_k.to_string());
        push("noise_scale", self.noise_scale.to_string());
        push("semantic_jitter", self.semantic_jitter.to_string());
        push("lr_pretrain", self.lr_pretrain.to_string());
        push("lr_generator", self.lr_generator.to_string());
        push("lr_alignment", self.lr_alignment.to_string());
        push("epochs_pretrain", self.epochs_pretrain.to_string());
        push("epochs_generator", self.epochs_generator.to_string());
        push("epochs_alignment", self.epochs_alignment.to_string());
        push("clip_norm", self.clip_norm.to_string());
        push("real_batch", self.real_batch.to_string());
        push("align_batch", self.align_batch.to_string());
        push("no_lgp_in_generator", self.no_lgp_in_generator.to_string());
        push("no_self_loss", self.no_self_loss.to_string());
        push("no_alignment", self.no_alignment.to_string());
        push("lgp_trainable_step2", self.lgp_trainable_step2.to_string());
        push("similarity", self.similarity.name().to_string());
        push("single_z", self.single_z.to_string());
        push("iou_averaging", self.iou_averaging.name().to_string());
        push("zsl_trivial", self.zsl_trivial.to_string());
        kv
    }

    pub fn to_file_contents(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_key_values() {
            out.push_str(&k);
            out.push('=');
            out.push_str(&v);
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn defaults_validate() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn roundtrip_through_file_contents() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("seed", "7").unwrap();
        cfg.set("m", "32").unwrap();
        cfg.set("similarity", "dot").unwrap();
        cfg.set("no_self_loss", "true").unwrap();

        let dir = std::env::temp_dir().join(format!("zshot_cfg_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.cfg");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(cfg.to_file_contents().as_bytes()).unwrap();

        let loaded = ExperimentConfig::from_file(&path).unwrap();
        assert_eq!(loaded.to_key_values(), cfg.to_key_values());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn unknown_key_and_bad_values_error() {
        let mut cfg = ExperimentConfig::default();
        assert!(cfg.set("no_such_key", "1").is_err());
        assert!(cfg.set("tau1", "warm").is_err());
        assert!(cfg.set("similarity", "euclidean").is_err());
    }

    #[test]
    fn validation_rejects_nonpositive_temperatures() {
        let mut cfg = ExperimentConfig::default();
        cfg.set("tau2", "0").unwrap();
        assert!(cfg.validate().is_err());
        let mut cfg2 = ExperimentConfig::default();
        cfg2.set("n_k", "300").unwrap();
        cfg2.set("n_c", "200").unwrap();
        assert!(cfg2.validate().is_err());
    }

    #[test]
    fn comments_and_blanks_are_ignored() {
        let dir = std::env::temp_dir().join(format!("zshot_cfg2_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("run.cfg");
        std::fs::write(&path, "# experiment\n\nseed=9 # trailing comment\nm=8\n").unwrap();
        let cfg = ExperimentConfig::from_file(&path).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.m, 8);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
