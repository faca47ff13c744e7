use super::primitive::{Primitive, DEFAULT_JITTER};
use super::DataError;
use crate::rng::{derive_seed, Rng};

/// One primitive inside a class shape, with its share of the class's points
/// and its offset in the class's local frame.
#[derive(Clone, Debug)]
pub struct ClassPart {
    pub primitive: Primitive,
    pub weight: f64,
    pub offset: [f64; 3],
}

/// A labeled class: a mixture of one to three primitives. Classes share
/// primitive kinds deliberately so seen and unseen classes have local
/// geometry in common.
#[derive(Clone, Debug)]
pub struct ClassDef {
    pub name: String,
    pub parts: Vec<ClassPart>,
}

impl ClassDef {
    fn new(name: &str, parts: Vec<ClassPart>) -> ClassDef {
        ClassDef {
            name: name.into(),
            parts,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.parts.is_empty() || self.parts.len() > 3 {
            return Err(DataError::Config(format!(
                "class `{}` must mix 1..=3 primitives, has {}",
                self.name,
                self.parts.len()
            )));
        }
        for part in &self.parts {
            part.primitive.validate()?;
            if part.weight <= 0.0 {
                return Err(DataError::Config(format!(
                    "class `{}` has a non-positive part weight",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// One synthetic point cloud with per-point class labels.
#[derive(Clone, Debug)]
pub struct SceneSample {
    pub scene_id: usize,
    pub points: Vec<[f64; 3]>,
    pub labels: Vec<usize>,
}

impl SceneSample {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Disjoint seen/unseen class partition, both sides sorted ascending.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassSplit {
    pub seen: Vec<usize>,
    pub unseen: Vec<usize>,
}

impl ClassSplit {
    pub fn n_classes(&self) -> usize {
        self.seen.len() + self.unseen.len()
    }

    pub fn is_seen(&self, class: usize) -> bool {
        self.seen.binary_search(&class).is_ok()
    }

    /// Position of `class` within the seen list (classifier column).
    pub fn seen_position(&self, class: usize) -> Option<usize> {
        self.seen.binary_search(&class).ok()
    }
}

/// The default desk corpus: eight classes built from five primitive kinds,
/// with heavy sharing of local structure across classes.
pub fn default_class_defs() -> Vec<ClassDef> {
    let sphere = |radius: f64| Primitive::Sphere { radius };
    let cylinder = |radius: f64, height: f64| Primitive::Cylinder { radius, height };
    let cone = |radius: f64, height: f64| Primitive::Cone { radius, height };
    let part = |primitive: Primitive, weight: f64, offset: [f64; 3]| ClassPart {
        primitive,
        weight,
        offset,
    };
    vec![
        ClassDef::new("ball", vec![part(sphere(0.35), 1.0, [0.0, 0.0, 0.0])]),
        ClassDef::new("pipe", vec![part(cylinder(0.25, 1.4), 1.0, [0.0, 0.0, 0.0])]),
        ClassDef::new(
            "crate",
            vec![part(
                Primitive::Cuboid {
                    extents: [0.9, 0.7, 0.6],
                },
                1.0,
                [0.0, 0.0, 0.0],
            )],
        ),
        ClassDef::new(
            "floor",
            vec![part(
                Primitive::Plane {
                    half_width: 1.5,
                    half_depth: 1.5,
                },
                1.0,
                [0.0, 0.0, 0.0],
            )],
        ),
        ClassDef::new("spike", vec![part(cone(0.5, 1.2), 1.0, [0.0, 0.0, 0.0])]),
        ClassDef::new(
            "capsule",
            vec![
                part(cylinder(0.12, 1.0), 0.6, [0.0, 0.0, 0.0]),
                part(sphere(0.12), 0.2, [0.0, 0.0, 0.0]),
                part(sphere(0.12), 0.2, [0.0, 0.0, 1.0]),
            ],
        ),
        ClassDef::new(
            "table",
            vec![
                part(
                    Primitive::Plane {
                        half_width: 0.55,
                        half_depth: 0.55,
                    },
                    0.6,
                    [0.0, 0.0, 0.65],
                ),
                part(
                    Primitive::Cuboid {
                        extents: [0.1, 0.1, 0.65],
                    },
                    0.2,
                    [-0.4, -0.4, 0.325],
                ),
                part(
                    Primitive::Cuboid {
                        extents: [0.1, 0.1, 0.65],
                    },
                    0.2,
                    [0.4, 0.4, 0.325],
                ),
            ],
        ),
        ClassDef::new(
            "rocket",
            vec![
                part(cylinder(0.5, 0.6), 0.65, [0.0, 0.0, 0.0]),
                part(cone(0.5, 0.35), 0.35, [0.0, 0.0, 0.6]),
            ],
        ),
    ]
}

/// Deterministic seen/unseen split: shuffles class indices with the seed and
/// takes the first `n_unseen` as unseen.
pub fn split_classes(n_classes: usize, n_unseen: usize, seed: u64) -> Result<ClassSplit, DataError> {
    if n_unseen == 0 || n_unseen >= n_classes {
        return Err(DataError::Config(format!(
            "n_unseen must satisfy 1 <= n_unseen < n_classes, got {n_unseen} of {n_classes}"
        )));
    }
    let mut order: Vec<usize> = (0..n_classes).collect();
    let mut rng = Rng::new(derive_seed(seed, 0xC1A5_5EED));
    rng.shuffle(&mut order);
    let mut unseen: Vec<usize> = order[..n_unseen].to_vec();
    let mut seen: Vec<usize> = order[n_unseen..].to_vec();
    unseen.sort_unstable();
    seen.sort_unstable();
    Ok(ClassSplit { seen, unseen })
}

/// Maximum share of a scene's points one class may take.
const MAX_CLASS_FRACTION: f64 = 0.6;
const MIN_POINTS_PER_CLASS: usize = 8;

/// Generates `n_scenes` labeled scenes. Each scene mixes at least three
/// classes at random poses; scene `i` always includes class `i mod C` so
/// every class appears once `n_scenes >= C`. Scene content depends only on
/// `(seed, scene_id)`, never on generation order.
pub fn compose_corpus(
    class_defs: &[ClassDef],
    n_scenes: usize,
    points_per_scene: usize,
    seed: u64,
) -> Result<Vec<SceneSample>, DataError> {
    validate_corpus_config(class_defs, points_per_scene)?;
    (0..n_scenes)
        .map(|scene_id| compose_scene(class_defs, scene_id, points_per_scene, seed))
        .collect()
}

fn validate_corpus_config(
    class_defs: &[ClassDef],
    points_per_scene: usize,
) -> Result<(), DataError> {
    if class_defs.len() < 2 {
        return Err(DataError::Config(format!(
            "need at least 2 classes, got {}",
            class_defs.len()
        )));
    }
    for def in class_defs {
        def.validate()?;
    }
    let min_points = class_defs.len() * MIN_POINTS_PER_CLASS;
    if points_per_scene < min_points {
        return Err(DataError::Config(format!(
            "points_per_scene {points_per_scene} is below {} classes x {MIN_POINTS_PER_CLASS}",
            class_defs.len()
        )));
    }
    Ok(())
}

/// Generates a single scene; used by `compose_corpus` and directly by tests
/// of order independence.
pub(crate) fn compose_scene(
    class_defs: &[ClassDef],
    scene_id: usize,
    points_per_scene: usize,
    seed: u64,
) -> Result<SceneSample, DataError> {
    let n_classes = class_defs.len();
    let mut rng = Rng::new(derive_seed(seed, scene_id as u64 + 1));

    // pick classes: forced rotation plus random distinct fill
    let max_in_scene = n_classes.min(5);
    let count = 3.min(n_classes) + rng.below(max_in_scene - 3.min(n_classes) + 1);
    let forced = scene_id % n_classes;
    let mut chosen = vec![forced];
    let mut others: Vec<usize> = (0..n_classes).filter(|&c| c != forced).collect();
    rng.shuffle(&mut others);
    chosen.extend(others.into_iter().take(count.saturating_sub(1)));
    chosen.sort_unstable();

    let counts = allocate_points(points_per_scene, chosen.len(), &mut rng);
    let centers = scatter_centers(chosen.len(), &mut rng);

    let mut points = Vec::with_capacity(points_per_scene);
    let mut labels = Vec::with_capacity(points_per_scene);
    for (slot, &class) in chosen.iter().enumerate() {
        let placed = place_class(&class_defs[class], counts[slot], centers[slot], &mut rng)?;
        for p in placed {
            points.push(p);
            labels.push(class);
        }
    }

    // interleave classes so row order carries no label signal
    let mut order: Vec<usize> = (0..points.len()).collect();
    rng.shuffle(&mut order);
    let points = order.iter().map(|&i| points[i]).collect();
    let labels = order.iter().map(|&i| labels[i]).collect();

    Ok(SceneSample {
        scene_id,
        points,
        labels,
    })
}

/// Splits `total` points over `slots` classes: random proportions, a 60%
/// cap, and at least `MIN_POINTS_PER_CLASS` each.
fn allocate_points(total: usize, slots: usize, rng: &mut Rng) -> Vec<usize> {
    let mut weights: Vec<f64> = (0..slots).map(|_| rng.range(0.7, 1.3)).collect();
    for _ in 0..8 {
        let sum: f64 = weights.iter().sum();
        let mut capped = false;
        for w in weights.iter_mut() {
            if *w / sum > MAX_CLASS_FRACTION {
                *w = sum * MAX_CLASS_FRACTION;
                capped = true;
            }
        }
        if !capped {
            break;
        }
    }
    let sum: f64 = weights.iter().sum();
    let mut counts: Vec<usize> = weights
        .iter()
        .map(|w| ((w / sum) * total as f64).floor() as usize)
        .collect();
    // hand out the remainder round-robin, then repair the floors
    let mut assigned: usize = counts.iter().sum();
    let mut i = 0;
    while assigned < total {
        counts[i % slots] += 1;
        assigned += 1;
        i += 1;
    }
    loop {
        let Some(small) = counts.iter().position(|&c| c < MIN_POINTS_PER_CLASS) else {
            break;
        };
        let big = (0..slots).max_by_key(|&j| counts[j]).unwrap();
        counts[big] -= 1;
        counts[small] += 1;
    }
    let cap = ((total as f64) * MAX_CLASS_FRACTION).floor() as usize;
    loop {
        let Some(over) = counts.iter().position(|&c| c > cap) else {
            break;
        };
        let under = (0..slots).min_by_key(|&j| counts[j]).unwrap();
        counts[over] -= 1;
        counts[under] += 1;
    }
    counts
}

/// Object centers with a minimum pairwise spacing in the ground plane, so
/// neighborhoods rarely straddle two objects. Rejection sampling with a
/// deterministic budget; the best layout so far wins if the budget runs
/// out.
fn scatter_centers(count: usize, rng: &mut Rng) -> Vec<[f64; 2]> {
    const MIN_SEPARATION: f64 = 1.4;
    let mut best: Vec<[f64; 2]> = Vec::new();
    let mut best_min = -1.0f64;
    for _ in 0..40 {
        let candidate: Vec<[f64; 2]> = (0..count)
            .map(|_| [rng.range(-2.0, 2.0), rng.range(-2.0, 2.0)])
            .collect();
        let mut min_dist = f64::INFINITY;
        for i in 0..count {
            for j in (i + 1)..count {
                let dx = candidate[i][0] - candidate[j][0];
                let dy = candidate[i][1] - candidate[j][1];
                min_dist = min_dist.min((dx * dx + dy * dy).sqrt());
            }
        }
        if min_dist > best_min {
            best_min = min_dist;
            best = candidate;
        }
        if best_min >= MIN_SEPARATION {
            break;
        }
    }
    best
}

/// Samples one class instance and applies a random pose: per-part offsets,
/// a z-rotation, a mild uniform scale, and a translation to the given
/// ground-plane center.
fn place_class(
    def: &ClassDef,
    n_points: usize,
    center: [f64; 2],
    rng: &mut Rng,
) -> Result<Vec<[f64; 3]>, DataError> {
    let weight_sum: f64 = def.parts.iter().map(|p| p.weight).sum();
    let mut part_counts: Vec<usize> = def
        .parts
        .iter()
        .map(|p| ((p.weight / weight_sum) * n_points as f64).floor() as usize)
        .collect();
    let n_parts = part_counts.len();
    let mut assigned: usize = part_counts.iter().sum();
    let mut i = 0;
    while assigned < n_points {
        part_counts[i % n_parts] += 1;
        assigned += 1;
        i += 1;
    }

    let theta = rng.range(0.0, std::f64::consts::TAU);
    let (sin_t, cos_t) = theta.sin_cos();
    let scale = rng.range(0.85, 1.15);
    let translation = [center[0], center[1], rng.range(-0.5, 0.5)];

    let mut out = Vec::with_capacity(n_points);
    for (part, &count) in def.parts.iter().zip(&part_counts) {
        if count == 0 {
            continue;
        }
        let sampled = part.primitive.sample_surface(count, DEFAULT_JITTER, rng)?;
        for p in sampled {
            let local = [
                p[0] + part.offset[0],
                p[1] + part.offset[1],
                p[2] + part.offset[2],
            ];
            let rotated = [
                cos_t * local[0] - sin_t * local[1],
                sin_t * local[0] + cos_t * local[1],
                local[2],
            ];
            out.push([
                scale * rotated[0] + translation[0],
                scale * rotated[1] + translation[1],
                scale * rotated[2] + translation[2],
            ]);
        }
    }
    Ok(out)
}
