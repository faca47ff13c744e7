use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::corpus::ClassDef;
use super::primitive::PrimitiveKind;
use super::DataError;
use crate::geometry::{knn_indices, local_descriptors};
use crate::rng::{derive_seed, Rng};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SemanticSource {
    Synthetic,
    Loaded,
    Concatenated,
}

impl SemanticSource {
    pub fn name(self) -> &'static str {
        match self {
            SemanticSource::Synthetic => "synthetic",
            SemanticSource::Loaded => "loaded",
            SemanticSource::Concatenated => "concatenated",
        }
    }
}

/// Per-class semantic embedding vectors, unit-norm, one per class.
#[derive(Clone, Debug)]
pub struct SemanticTable {
    pub dim: usize,
    pub vectors: Vec<Vec<f64>>,
    pub source: SemanticSource,
}

impl SemanticTable {
    pub fn n_classes(&self) -> usize {
        self.vectors.len()
    }

    pub fn vector(&self, class: usize) -> Result<&[f64], DataError> {
        self.vectors
            .get(class)
            .map(|v| v.as_slice())
            .ok_or_else(|| DataError::Lookup {
                class: class.to_string(),
                detail: format!("table holds {} classes", self.vectors.len()),
            })
    }

    /// Flattened row-major matrix of all class vectors.
    pub fn matrix(&self) -> Vec<f64> {
        self.vectors.iter().flatten().cloned().collect()
    }

    fn normalize(&mut self) {
        for v in self.vectors.iter_mut() {
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                for x in v.iter_mut() {
                    *x /= norm;
                }
            }
        }
    }
}

/// Hand-set geometric character per primitive kind, shared across classes:
/// curvature, flatness, axial elongation, apex, closedness. Classes mixing
/// the same kinds end up with correlated descriptors.
fn kind_signature(kind: PrimitiveKind) -> [f64; 5] {
    match kind {
        PrimitiveKind::Cone => [1.0, 0.0, 1.0, 1.0, 0.4],
        PrimitiveKind::Cylinder => [1.0, 0.0, 1.0, 0.0, 0.5],
        PrimitiveKind::Cuboid => [0.0, 1.0, 0.0, 0.0, 0.9],
        PrimitiveKind::Sphere => [1.0, 0.0, 0.0, 0.0, 1.0],
        PrimitiveKind::Plane => [0.0, 1.0, 0.0, 0.0, 0.0],
    }
}

pub const DESCRIPTOR_DIM: usize = 17;

/// Canonical sample size used when measuring a class's surface statistics.
const CANONICAL_POINTS: usize = 256;

/// Geometry descriptor of a class: primitive-kind proportions, the blended
/// kind signature, size statistics, and surface statistics measured on a
/// canonical sample of the class shape with the same local-descriptor
/// machinery the feature extractor uses. Identical part lists give
/// identical descriptors.
pub fn class_descriptor(def: &ClassDef) -> [f64; DESCRIPTOR_DIM] {
    let mut desc = [0.0; DESCRIPTOR_DIM];
    let total_weight: f64 = def.parts.iter().map(|p| p.weight).sum();
    let mut mean_scale = 0.0;
    let mut max_scale = 0.0f64;

    // canonical cloud: every part sampled at its point share, in the class
    // local frame, with the corpus jitter; one fixed seed so the measurement
    // depends only on the part list
    let mut cloud: Vec<[f64; 3]> = Vec::with_capacity(CANONICAL_POINTS);
    let mut rng = Rng::new(0xD15C_0000);
    for part in &def.parts {
        let w = part.weight / total_weight;
        desc[part.primitive.kind().index()] += w;
        let sig = kind_signature(part.primitive.kind());
        for (slot, s) in desc[5..10].iter_mut().zip(sig) {
            *slot += w * s;
        }
        let scale = part.primitive.scale();
        mean_scale += w * scale;
        max_scale = max_scale.max(scale);

        let count = ((CANONICAL_POINTS as f64) * w).round().max(8.0) as usize;
        if let Ok(points) = part
            .primitive
            .sample_surface(count, crate::data::DEFAULT_JITTER, &mut rng)
        {
            for p in points {
                cloud.push([
                    p[0] + part.offset[0],
                    p[1] + part.offset[1],
                    p[2] + part.offset[2],
                ]);
            }
        }
    }
    let k = 16.min(cloud.len().saturating_sub(1)).max(2);
    let (mean_bend, mean_nz, mean_spacing, std_nz) = match knn_indices(&cloud, k) {
        Ok(neighbors) => {
            let stats = local_descriptors(&cloud, &neighbors);
            let n = cloud.len() as f64;
            let mut sums = [0.0f64; 3];
            let mut nz_sq = 0.0;
            for row in stats.chunks(3) {
                sums[0] += row[0];
                sums[1] += row[1];
                sums[2] += row[2];
                nz_sq += row[1] * row[1];
            }
            let mean_nz = sums[1] / n;
            let var = (nz_sq / n - mean_nz * mean_nz).max(0.0);
            (sums[0] / n, mean_nz, sums[2] / n, var.sqrt())
        }
        Err(_) => (0.0, 0.0, 0.0, 0.0),
    };

    desc[10] = mean_scale;
    desc[11] = max_scale;
    desc[12] = def.parts.len() as f64 / 3.0;
    desc[13] = mean_bend;
    desc[14] = mean_nz;
    desc[15] = mean_spacing;
    desc[16] = std_nz;
    desc
}

/// Per-column weights applied to standardized descriptors: the measured
/// surface statistics dominate because they mirror what the feature
/// extractor computes; kind identity and size act as softer cues.
const GROUP_WEIGHTS: [f64; DESCRIPTOR_DIM] = [
    0.5, 0.5, 0.5, 0.5, 0.5, // kind proportions
    0.6, 0.6, 0.6, 0.6, 0.6, // kind signature blend
    0.6, 0.6, 0.6, // size stats
    1.6, 1.6, 1.6, 1.2, // measured bend, normal-up, spacing, nz spread
];

/// Synthetic semantic embeddings: a fixed random projection of each class
/// descriptor plus Gaussian noise, L2-normalized.
pub fn synth_semantic_embeddings(
    class_defs: &[ClassDef],
    d_t: usize,
    noise: f64,
    seed: u64,
) -> Result<SemanticTable, DataError> {
    if d_t < 4 {
        return Err(DataError::Config(format!(
            "semantic dimension must be at least 4, got {d_t}"
        )));
    }
    let mut proj_rng = Rng::new(derive_seed(seed, 0x5E3A));
    let mut projection =
        proj_rng.normal_vec(d_t * DESCRIPTOR_DIM, 1.0 / (DESCRIPTOR_DIM as f64).sqrt());
    if d_t >= DESCRIPTOR_DIM {
        // orthonormalize the descriptor axes' images so the embedding is an
        // isometry of descriptor space (cosine structure survives exactly);
        // columns live at stride DESCRIPTOR_DIM
        for j in 0..DESCRIPTOR_DIM {
            for prev in 0..j {
                let dot: f64 = (0..d_t)
                    .map(|i| {
                        projection[i * DESCRIPTOR_DIM + j] * projection[i * DESCRIPTOR_DIM + prev]
                    })
                    .sum();
                for i in 0..d_t {
                    let p = projection[i * DESCRIPTOR_DIM + prev];
                    projection[i * DESCRIPTOR_DIM + j] -= dot * p;
                }
            }
            let norm: f64 = (0..d_t)
                .map(|i| projection[i * DESCRIPTOR_DIM + j].powi(2))
                .sum::<f64>()
                .sqrt()
                .max(1e-12);
            for i in 0..d_t {
                projection[i * DESCRIPTOR_DIM + j] /= norm;
            }
        }
    }
    let mut noise_rng = Rng::new(derive_seed(seed, 0x401E));

    // standardize descriptor columns over the class set so the cosine
    // geometry reflects relative differences rather than a shared baseline,
    // then weight the feature groups
    let descriptors: Vec<[f64; DESCRIPTOR_DIM]> =
        class_defs.iter().map(class_descriptor).collect();
    let n = descriptors.len().max(1) as f64;
    let mut mean = [0.0f64; DESCRIPTOR_DIM];
    let mut var = [0.0f64; DESCRIPTOR_DIM];
    for desc in &descriptors {
        for (m, &x) in mean.iter_mut().zip(desc.iter()) {
            *m += x / n;
        }
    }
    for desc in &descriptors {
        for j in 0..DESCRIPTOR_DIM {
            var[j] += (desc[j] - mean[j]) * (desc[j] - mean[j]) / n;
        }
    }
    let mut vectors = Vec::with_capacity(class_defs.len());
    for desc in &descriptors {
        let standardized: Vec<f64> = (0..DESCRIPTOR_DIM)
            .map(|j| {
                let std = var[j].sqrt();
                let z = if std > 1e-9 { (desc[j] - mean[j]) / std } else { 0.0 };
                z * GROUP_WEIGHTS[j]
            })
            .collect();
        let mut v = vec![0.0; d_t];
        for (i, slot) in v.iter_mut().enumerate() {
            for (j, &x) in standardized.iter().enumerate() {
                *slot += projection[i * DESCRIPTOR_DIM + j] * x;
            }
            *slot += noise * noise_rng.normal();
        }
        vectors.push(v);
    }
    let mut table = SemanticTable {
        dim: d_t,
        vectors,
        source: SemanticSource::Synthetic,
    };
    table.normalize();
    Ok(table)
}

/// Loads per-class vectors from whitespace-separated embedding files
/// (`word v0 v1 ... v{d-1}` per line). Multiple files concatenate along the
/// feature axis; class names split on spaces, hyphens, and underscores, and
/// their token vectors are averaged.
pub fn load_word_vectors<P: AsRef<Path>>(
    paths: &[P],
    class_names: &[String],
) -> Result<SemanticTable, DataError> {
    if paths.is_empty() {
        return Err(DataError::Config("no embedding files given".into()));
    }
    let mut per_file: Vec<HashMap<String, Vec<f64>>> = Vec::with_capacity(paths.len());
    let mut dims = Vec::with_capacity(paths.len());
    for path in paths {
        let (map, dim) = read_embedding_file(path.as_ref())?;
        per_file.push(map);
        dims.push(dim);
    }
    let total_dim: usize = dims.iter().sum();

    let mut vectors = Vec::with_capacity(class_names.len());
    for name in class_names {
        let tokens: Vec<&str> = name
            .split(|c: char| c == ' ' || c == '-' || c == '_')
            .filter(|t| !t.is_empty())
            .collect();
        if tokens.is_empty() {
            return Err(DataError::Lookup {
                class: name.clone(),
                detail: "class name has no tokens".into(),
            });
        }
        let mut joint = Vec::with_capacity(total_dim);
        for (map, &dim) in per_file.iter().zip(&dims) {
            let mut avg = vec![0.0; dim];
            for token in &tokens {
                let vec = map.get(&token.to_lowercase()).ok_or_else(|| DataError::Lookup {
                    class: name.clone(),
                    detail: format!("token `{token}` missing from an embedding file"),
                })?;
                for (a, v) in avg.iter_mut().zip(vec) {
                    *a += v;
                }
            }
            for a in avg.iter_mut() {
                *a /= tokens.len() as f64;
            }
            joint.extend(avg);
        }
        vectors.push(joint);
    }

    let mut table = SemanticTable {
        dim: total_dim,
        vectors,
        source: if paths.len() > 1 {
            SemanticSource::Concatenated
        } else {
            SemanticSource::Loaded
        },
    };
    table.normalize();
    Ok(table)
}

fn read_embedding_file(path: &Path) -> Result<(HashMap<String, Vec<f64>>, usize), DataError> {
    let text = fs::read_to_string(path)?;
    let display = path.display().to_string();
    let mut map = HashMap::new();
    let mut dim: Option<usize> = None;
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let word = fields
            .next()
            .ok_or_else(|| DataError::Format {
                path: display.clone(),
                detail: format!("line {}: empty record", line_no + 1),
            })?
            .to_lowercase();
        let values: Result<Vec<f64>, _> = fields.map(|f| f.parse::<f64>()).collect();
        let values = values.map_err(|e| DataError::Format {
            path: display.clone(),
            detail: format!("line {}: {e}", line_no + 1),
        })?;
        if values.is_empty() {
            return Err(DataError::Format {
                path: display.clone(),
                detail: format!("line {}: word `{word}` has no values", line_no + 1),
            });
        }
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(DataError::Format {
                    path: display.clone(),
                    detail: format!(
                        "line {}: dimension {} does not match {d}",
                        line_no + 1,
                        values.len()
                    ),
                });
            }
            _ => {}
        }
        map.insert(word, values);
    }
    let dim = dim.ok_or_else(|| DataError::Format {
        path: display,
        detail: "file holds no records".into(),
    })?;
    Ok((map, dim))
}
