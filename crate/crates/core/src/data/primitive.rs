use super::DataError;
use crate::rng::Rng;

/// Relative jitter: the Gaussian surface noise has standard deviation
/// `DEFAULT_JITTER * primitive scale`, with the displacement vector capped
/// at three standard deviations so surfaces stay identifiable.
pub const DEFAULT_JITTER: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PrimitiveKind {
    Cone,
    Cylinder,
    Cuboid,
    Sphere,
    Plane,
}

impl PrimitiveKind {
    pub const ALL: [PrimitiveKind; 5] = [
        PrimitiveKind::Cone,
        PrimitiveKind::Cylinder,
        PrimitiveKind::Cuboid,
        PrimitiveKind::Sphere,
        PrimitiveKind::Plane,
    ];

    pub fn index(self) -> usize {
        match self {
            PrimitiveKind::Cone => 0,
            PrimitiveKind::Cylinder => 1,
            PrimitiveKind::Cuboid => 2,
            PrimitiveKind::Sphere => 3,
            PrimitiveKind::Plane => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PrimitiveKind::Cone => "cone",
            PrimitiveKind::Cylinder => "cylinder",
            PrimitiveKind::Cuboid => "cuboid",
            PrimitiveKind::Sphere => "sphere",
            PrimitiveKind::Plane => "plane",
        }
    }
}

/// A parametric surface. Cones and cylinders are lateral surfaces (no end
/// caps) so closed-form radius checks hold for every sampled point; cuboids
/// cover all six faces; planes are axis-aligned rectangles at z = 0.
#[derive(Clone, Copy, Debug)]
pub enum Primitive {
    Cone { radius: f64, height: f64 },
    Cylinder { radius: f64, height: f64 },
    Cuboid { extents: [f64; 3] },
    Sphere { radius: f64 },
    Plane { half_width: f64, half_depth: f64 },
}

impl Primitive {
    pub fn kind(&self) -> PrimitiveKind {
        match self {
            Primitive::Cone { .. } => PrimitiveKind::Cone,
            Primitive::Cylinder { .. } => PrimitiveKind::Cylinder,
            Primitive::Cuboid { .. } => PrimitiveKind::Cuboid,
            Primitive::Sphere { .. } => PrimitiveKind::Sphere,
            Primitive::Plane { .. } => PrimitiveKind::Plane,
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let ok = match self {
            Primitive::Cone { radius, height } | Primitive::Cylinder { radius, height } => {
                *radius > 0.0 && *height > 0.0
            }
            Primitive::Cuboid { extents } => extents.iter().all(|e| *e > 0.0),
            Primitive::Sphere { radius } => *radius > 0.0,
            Primitive::Plane {
                half_width,
                half_depth,
            } => *half_width > 0.0 && *half_depth > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(DataError::Geometry(format!(
                "{:?} requires strictly positive dimensions",
                self
            )))
        }
    }

    /// Characteristic size used to scale jitter.
    pub fn scale(&self) -> f64 {
        match self {
            Primitive::Cone { radius, height } | Primitive::Cylinder { radius, height } => {
                radius.max(*height)
            }
            Primitive::Cuboid { extents } => extents.iter().cloned().fold(0.0, f64::max),
            Primitive::Sphere { radius } => *radius,
            Primitive::Plane {
                half_width,
                half_depth,
            } => half_width.max(*half_depth).max(1e-12) * 2.0,
        }
    }

    /// One point uniform on the surface, before jitter.
    fn sample_point(&self, rng: &mut Rng) -> [f64; 3] {
        match *self {
            Primitive::Sphere { radius } => {
                // isotropic direction from three normals
                loop {
                    let v = [rng.normal(), rng.normal(), rng.normal()];
                    let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                    if norm > 1e-9 {
                        return [
                            radius * v[0] / norm,
                            radius * v[1] / norm,
                            radius * v[2] / norm,
                        ];
                    }
                }
            }
            Primitive::Cylinder { radius, height } => {
                let theta = rng.range(0.0, std::f64::consts::TAU);
                let z = rng.range(0.0, height);
                [radius * theta.cos(), radius * theta.sin(), z]
            }
            Primitive::Cone { radius, height } => {
                // lateral surface: area element is proportional to the local
                // radius, so draw the radial fraction as sqrt(u)
                let theta = rng.range(0.0, std::f64::consts::TAU);
                let s = rng.uniform().sqrt();
                [
                    s * radius * theta.cos(),
                    s * radius * theta.sin(),
                    height * (1.0 - s),
                ]
            }
            Primitive::Cuboid { extents } => {
                let [ex, ey, ez] = extents;
                let areas = [ey * ez, ey * ez, ex * ez, ex * ez, ex * ey, ex * ey];
                let total: f64 = areas.iter().sum();
                let mut pick = rng.uniform() * total;
                let mut face = 5;
                for (i, a) in areas.iter().enumerate() {
                    if pick < *a {
                        face = i;
                        break;
                    }
                    pick -= a;
                }
                let u = rng.uniform();
                let v = rng.uniform();
                let (hx, hy, hz) = (ex / 2.0, ey / 2.0, ez / 2.0);
                match face {
                    0 => [-hx, (u - 0.5) * ey, (v - 0.5) * ez],
                    1 => [hx, (u - 0.5) * ey, (v - 0.5) * ez],
                    2 => [(u - 0.5) * ex, -hy, (v - 0.5) * ez],
                    3 => [(u - 0.5) * ex, hy, (v - 0.5) * ez],
                    4 => [(u - 0.5) * ex, (v - 0.5) * ey, -hz],
                    _ => [(u - 0.5) * ex, (v - 0.5) * ey, hz],
                }
            }
            Primitive::Plane {
                half_width,
                half_depth,
            } => [
                rng.range(-half_width, half_width),
                rng.range(-half_depth, half_depth),
                0.0,
            ],
        }
    }

    /// Samples `n` surface points and applies capped Gaussian jitter of
    /// standard deviation `jitter_rel * scale`.
    pub fn sample_surface(
        &self,
        n: usize,
        jitter_rel: f64,
        rng: &mut Rng,
    ) -> Result<Vec<[f64; 3]>, DataError> {
        self.validate()?;
        let sigma = jitter_rel * self.scale();
        let mut points = Vec::with_capacity(n);
        for _ in 0..n {
            let mut p = self.sample_point(rng);
            if sigma > 0.0 {
                let mut g = [rng.normal(), rng.normal(), rng.normal()];
                let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
                if norm > 3.0 {
                    for v in g.iter_mut() {
                        *v *= 3.0 / norm;
                    }
                }
                for (c, gv) in p.iter_mut().zip(g) {
                    *c += sigma * gv;
                }
            }
            points.push(p);
        }
        Ok(points)
    }
}

/// Jittered uniform surface sample of one primitive.
pub fn make_primitive(
    primitive: &Primitive,
    n_points: usize,
    jitter_rel: f64,
    seed: u64,
) -> Result<Vec<[f64; 3]>, DataError> {
    if n_points < 8 {
        return Err(DataError::Config(format!(
            "n_points must be at least 8, got {n_points}"
        )));
    }
    let mut rng = Rng::new(seed);
    primitive.sample_surface(n_points, jitter_rel, &mut rng)
}
