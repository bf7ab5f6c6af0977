//! Synthetic susceptibility labels: random geometric shapes for training and a
//! labelled 3D Shepp-Logan phantom for evaluation.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::Rng as _;

use crate::config::{join_list, KeyValues};
use crate::error::{ensure, Error, Result};
use crate::seed::rng_from_seed;
use crate::volgrid::{Dims, Unit, Volume};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Sphere,
    Cube,
    Cuboid,
}

impl ShapeKind {
    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Sphere => "sphere",
            ShapeKind::Cube => "cube",
            ShapeKind::Cuboid => "cuboid",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "sphere" => Ok(ShapeKind::Sphere),
            "cube" => Ok(ShapeKind::Cube),
            "cuboid" => Ok(ShapeKind::Cuboid),
            other => Err(Error::Config(format!("unknown shape kind {other:?}"))),
        }
    }
}

/// Parameters of the random-shape label generator.
///
/// Config keys: `dims`, `voxel_size`, `shape_count`, `kinds`, `sphere_radius`,
/// `cube_edge`, `cuboid_edge`, `susceptibility`, `seed`. Ranges are written as
/// `lo,hi`.
#[derive(Clone, Debug, PartialEq)]
pub struct ShapeConfig {
    pub dims: Dims,
    pub voxel_size: [f64; 3],
    pub shape_count: (usize, usize),
    pub kinds: Vec<ShapeKind>,
    /// Sphere radius in voxels.
    pub sphere_radius: (f64, f64),
    /// Cube edge length in voxels.
    pub cube_edge: (usize, usize),
    /// Cuboid edge lengths in voxels, drawn independently per axis.
    pub cuboid_edge: (usize, usize),
    /// Susceptibility range in ppb.
    pub susceptibility: (f64, f64),
    pub seed: u64,
}

impl ShapeConfig {
    pub fn new(dims: Dims) -> Self {
        Self {
            dims,
            voxel_size: [1.0; 3],
            shape_count: (5, 30),
            kinds: vec![ShapeKind::Sphere, ShapeKind::Cube, ShapeKind::Cuboid],
            sphere_radius: (3.0, 12.0),
            cube_edge: (4, 20),
            cuboid_edge: (4, 20),
            susceptibility: (-300.0, 300.0),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.dims.iter().all(|&d| d >= 1),
            Config,
            "dims must be >= 1"
        );
        ensure!(
            self.shape_count.0 <= self.shape_count.1,
            Config,
            "shape_count min > max"
        );
        ensure!(!self.kinds.is_empty(), Config, "no shape kinds enabled");
        let (lo, hi) = self.susceptibility;
        ensure!(
            lo.is_finite() && hi.is_finite() && lo <= hi,
            Config,
            "invalid susceptibility range ({lo}, {hi})"
        );
        let min_dim = *self.dims.iter().min().unwrap();
        for kind in &self.kinds {
            let extent = match kind {
                ShapeKind::Sphere => {
                    let (a, b) = self.sphere_radius;
                    ensure!(
                        a > 0.0 && a <= b,
                        Config,
                        "invalid sphere_radius ({a}, {b})"
                    );
                    (2.0 * b).ceil() as usize + 1
                }
                ShapeKind::Cube => {
                    let (a, b) = self.cube_edge;
                    ensure!(a >= 1 && a <= b, Config, "invalid cube_edge ({a}, {b})");
                    b
                }
                ShapeKind::Cuboid => {
                    let (a, b) = self.cuboid_edge;
                    ensure!(a >= 1 && a <= b, Config, "invalid cuboid_edge ({a}, {b})");
                    b
                }
            };
            ensure!(
                extent <= min_dim,
                Config,
                "largest {} ({extent} voxels) does not fit dims {:?}",
                kind.name(),
                self.dims
            );
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("dims", join_list(&self.dims));
        kv.set("voxel_size", join_list(&self.voxel_size));
        kv.set(
            "shape_count",
            join_list(&[self.shape_count.0, self.shape_count.1]),
        );
        kv.set(
            "kinds",
            self.kinds
                .iter()
                .map(|k| k.name())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv.set(
            "sphere_radius",
            join_list(&[self.sphere_radius.0, self.sphere_radius.1]),
        );
        kv.set(
            "cube_edge",
            join_list(&[self.cube_edge.0, self.cube_edge.1]),
        );
        kv.set(
            "cuboid_edge",
            join_list(&[self.cuboid_edge.0, self.cuboid_edge.1]),
        );
        kv.set(
            "susceptibility",
            join_list(&[self.susceptibility.0, self.susceptibility.1]),
        );
        kv.set("seed", self.seed);
        kv
    }

    /// Overrides the defaults of `ShapeConfig::new(dims)` with whatever keys are
    /// present.
    pub fn from_key_values(kv: &KeyValues, default_dims: Dims) -> Result<Self> {
        let dims = match kv.get_list::<usize>("dims")? {
            Some(d) => dims_from_list(&d)?,
            None => default_dims,
        };
        let mut cfg = ShapeConfig::new(dims);
        if let Some(v) = kv.get_list::<f64>("voxel_size")? {
            cfg.voxel_size = triple(&v, "voxel_size")?;
        }
        if let Some(v) = kv.get_list::<usize>("shape_count")? {
            cfg.shape_count = pair(&v, "shape_count")?;
        }
        if let Some(s) = kv.get_str("kinds") {
            cfg.kinds = s
                .split(',')
                .filter(|p| !p.trim().is_empty())
                .map(ShapeKind::parse)
                .collect::<Result<_>>()?;
        }
        if let Some(v) = kv.get_list::<f64>("sphere_radius")? {
            cfg.sphere_radius = pair(&v, "sphere_radius")?;
        }
        if let Some(v) = kv.get_list::<usize>("cube_edge")? {
            cfg.cube_edge = pair(&v, "cube_edge")?;
        }
        if let Some(v) = kv.get_list::<usize>("cuboid_edge")? {
            cfg.cuboid_edge = pair(&v, "cuboid_edge")?;
        }
        if let Some(v) = kv.get_list::<f64>("susceptibility")? {
            cfg.susceptibility = pair(&v, "susceptibility")?;
        }
        if let Some(s) = kv.get::<u64>("seed")? {
            cfg.seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn pair<T: Copy>(v: &[T], key: &str) -> Result<(T, T)> {
    match v {
        [a, b] => Ok((*a, *b)),
        _ => Err(Error::Config(format!("{key} needs two values"))),
    }
}

fn triple<T: Copy>(v: &[T], key: &str) -> Result<[T; 3]> {
    match v {
        [a] => Ok([*a; 3]),
        [a, b, c] => Ok([*a, *b, *c]),
        _ => Err(Error::Config(format!("{key} needs one or three values"))),
    }
}

/// `n` or `nx,ny,nz`.
pub fn dims_from_list(v: &[usize]) -> Result<Dims> {
    triple(v, "dims")
}

/// Draws a volume of randomly placed spheres, cubes and cuboids.
///
/// Shapes are painted in draw order, so later shapes overwrite earlier ones.
/// Per shape the generator draws, in order: kind, value, centre (x, y, z),
/// then size.
pub fn random_shapes(config: &ShapeConfig) -> Result<Volume> {
    config.validate()?;
    let mut rng = rng_from_seed(config.seed);
    let dims = config.dims;
    let mut data = vec![0.0; dims.iter().product()];
    let count = rng.random_range(config.shape_count.0..=config.shape_count.1);
    let (lo, hi) = config.susceptibility;
    for _ in 0..count {
        let kind = config.kinds[rng.random_range(0..config.kinds.len())];
        let value = if lo == hi {
            lo
        } else {
            rng.random_range(lo..=hi)
        };
        let centre: [f64; 3] = std::array::from_fn(|a| rng.random_range(0.0..(dims[a] as f64)));
        match kind {
            ShapeKind::Sphere => {
                let (a, b) = config.sphere_radius;
                let r = if a == b { a } else { rng.random_range(a..=b) };
                paint_sphere(&mut data, dims, centre, r, value);
            }
            ShapeKind::Cube => {
                let e = rng.random_range(config.cube_edge.0..=config.cube_edge.1);
                paint_box(&mut data, dims, centre, [e; 3], value);
            }
            ShapeKind::Cuboid => {
                let (a, b) = config.cuboid_edge;
                let edges: [usize; 3] = std::array::from_fn(|_| rng.random_range(a..=b));
                paint_box(&mut data, dims, centre, edges, value);
            }
        }
    }
    Volume::new(data, dims, config.voxel_size, Unit::Ppb)
}

fn paint_sphere(data: &mut [f64], dims: Dims, c: [f64; 3], r: f64, value: f64) {
    let span = |a: usize| {
        let lo = (c[a] - r).ceil().max(0.0) as usize;
        let hi = ((c[a] + r).floor() as isize).min(dims[a] as isize - 1);
        (lo, hi)
    };
    let (x0, x1) = span(0);
    let (y0, y1) = span(1);
    let (z0, z1) = span(2);
    let r2 = r * r;
    for z in z0 as isize..=z1 {
        let dz = z as f64 - c[2];
        for y in y0 as isize..=y1 {
            let dy = y as f64 - c[1];
            for x in x0 as isize..=x1 {
                let dx = x as f64 - c[0];
                if dx * dx + dy * dy + dz * dz <= r2 {
                    data[x as usize + dims[0] * (y as usize + dims[1] * z as usize)] = value;
                }
            }
        }
    }
}

fn paint_box(data: &mut [f64], dims: Dims, c: [f64; 3], edges: [usize; 3], value: f64) {
    let range = |a: usize| {
        let start = (c[a] - edges[a] as f64 / 2.0).round() as isize;
        let lo = start.max(0) as usize;
        let hi = ((start + edges[a] as isize).min(dims[a] as isize)).max(0) as usize;
        lo..hi
    };
    let (rx, ry, rz) = (range(0), range(1), range(2));
    for z in rz {
        for y in ry.clone() {
            let row = dims[0] * (y + dims[1] * z);
            data[row + rx.start..row + rx.end].fill(value);
        }
    }
}

/// Multiplies every voxel by `factor`; the unit is unchanged.
pub fn scale_chi(volume: &Volume, factor: f64) -> Volume {
    volume.map(|v| v * factor)
}

/// Susceptibilities (ppb) of the six labelled structures of the evaluation
/// phantom, in label order 1..=6.
pub const SHEPP_LOGAN_PPB: [f64; 6] = [-100.0, -250.0, -200.0, -50.0, 150.0, 350.0];

/// One ellipsoid of the 3D Shepp-Logan head: semi-axes `(a, b, c)`, centre
/// `(x0, y0, z0)` and Euler angles `(phi, theta, psi)` in degrees, all in the
/// normalized `[-1, 1]³` frame.
#[derive(Clone, Copy, Debug)]
pub struct Ellipsoid {
    pub semi_axes: [f64; 3],
    pub centre: [f64; 3],
    pub euler_deg: [f64; 3],
}

#[allow(clippy::too_many_arguments)]
const fn ell(a: f64, b: f64, c: f64, x0: f64, y0: f64, z0: f64, phi: f64, psi: f64) -> Ellipsoid {
    Ellipsoid {
        semi_axes: [a, b, c],
        centre: [x0, y0, z0],
        euler_deg: [phi, 0.0, psi],
    }
}

/// The ten-ellipsoid 3D Shepp-Logan geometry (Kak & Slaney / Toft table).
pub const SHEPP_LOGAN_ELLIPSOIDS: [Ellipsoid; 10] = [
    ell(0.6900, 0.920, 0.810, 0.0, 0.0, 0.0, 0.0, 0.0),
    ell(0.6624, 0.874, 0.780, 0.0, -0.0184, 0.0, 0.0, 0.0),
    ell(0.1100, 0.310, 0.220, 0.22, 0.0, 0.0, -18.0, 10.0),
    ell(0.1600, 0.410, 0.280, -0.22, 0.0, 0.0, 18.0, 10.0),
    ell(0.2100, 0.250, 0.410, 0.0, 0.35, -0.15, 0.0, 0.0),
    ell(0.0460, 0.046, 0.050, 0.0, 0.1, 0.25, 0.0, 0.0),
    ell(0.0460, 0.046, 0.050, 0.0, -0.1, 0.25, 0.0, 0.0),
    ell(0.0460, 0.023, 0.050, -0.08, -0.605, 0.0, 0.0, 0.0),
    ell(0.0230, 0.023, 0.020, 0.0, -0.606, 0.0, 0.0, 0.0),
    ell(0.0230, 0.046, 0.020, 0.06, -0.605, 0.0, 0.0, 0.0),
];

/// Table indices of the labelled structures: the brain body and the five
/// largest structures inside it. Label `i + 1` is ellipsoid
/// `SHEPP_LOGAN_LABELLED[i]`; everything else is background (label 0).
pub const SHEPP_LOGAN_LABELLED: [usize; 6] = [1, 2, 3, 4, 5, 6];

impl Ellipsoid {
    fn rotation(&self) -> [[f64; 3]; 3] {
        let [phi, theta, psi] = self.euler_deg.map(|d| d * PI / 180.0);
        let (sp, cp) = phi.sin_cos();
        let (st, ct) = theta.sin_cos();
        let (ss, cs) = psi.sin_cos();
        [
            [cs * cp - ct * sp * ss, cs * sp + ct * cp * ss, ss * st],
            [-ss * cp - ct * sp * cs, -ss * sp + ct * cp * cs, cs * st],
            [st * sp, -st * cp, ct],
        ]
    }

    /// Whether the normalized point `p` lies inside.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let r = self.rotation();
        let mut s = 0.0;
        for a in 0..3 {
            let q = r[a][0] * p[0] + r[a][1] * p[1] + r[a][2] * p[2] - self.centre[a];
            s += q * q / (self.semi_axes[a] * self.semi_axes[a]);
        }
        s <= 1.0
    }
}

/// A piecewise-constant phantom with integer region labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPhantom {
    pub chi: Volume,
    /// Region id per voxel, same layout as `chi`. 0 is background.
    pub labels: Vec<u32>,
    /// Nominal susceptibility (ppb) of every non-background region.
    pub region_table: BTreeMap<u32, f64>,
}

impl LabeledPhantom {
    /// Labels as a unitless volume, for the sidecar label file.
    pub fn label_volume(&self) -> Volume {
        self.chi
            .with_data(
                self.labels.iter().map(|&l| l as f64).collect(),
                Unit::Unitless,
            )
            .expect("labels share the phantom grid")
    }
}

/// Converts a label volume (as written by [`LabeledPhantom::label_volume`])
/// back to integer labels.
pub fn labels_from_volume(volume: &Volume) -> Result<Vec<u32>> {
    volume
        .data()
        .iter()
        .map(|&v| {
            if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
                Ok(v as u32)
            } else {
                Err(Error::InvalidArgument(format!(
                    "label value {v} is not a region id"
                )))
            }
        })
        .collect()
}

/// Builds the labelled 3D Shepp-Logan phantom at `dims` with 1 mm voxels.
pub fn shepp_logan(dims: Dims, values: [f64; 6]) -> Result<LabeledPhantom> {
    ensure!(
        dims.iter().all(|&d| d >= 32),
        InvalidArgument,
        "Shepp-Logan phantom needs dims >= 32 per axis, got {dims:?}"
    );
    for &idx in &SHEPP_LOGAN_LABELLED {
        let e = &SHEPP_LOGAN_ELLIPSOIDS[idx];
        for a in 0..3 {
            // normalized [-1, 1] spans n - 1 voxels
            let across = e.semi_axes[a] * (dims[a] - 1) as f64;
            ensure!(
                across >= 2.0,
                InvalidArgument,
                "dims {dims:?} resolve ellipsoid {idx} with only {across:.2} voxels"
            );
        }
    }
    let coord = |i: usize, n: usize| {
        let h = (n - 1) as f64 / 2.0;
        (i as f64 - h) / h
    };
    let mut labels = vec![0u32; dims.iter().product()];
    for z in 0..dims[2] {
        let pz = coord(z, dims[2]);
        for y in 0..dims[1] {
            let py = coord(y, dims[1]);
            for x in 0..dims[0] {
                let p = [coord(x, dims[0]), py, pz];
                let i = x + dims[0] * (y + dims[1] * z);
                for (label, &idx) in SHEPP_LOGAN_LABELLED.iter().enumerate() {
                    if SHEPP_LOGAN_ELLIPSOIDS[idx].contains(p) {
                        labels[i] = label as u32 + 1;
                    }
                }
            }
        }
    }
    let region_table: BTreeMap<u32, f64> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| (i as u32 + 1, v))
        .collect();
    let data = labels
        .iter()
        .map(|&l| if l == 0 { 0.0 } else { region_table[&l] })
        .collect();
    let chi = Volume::new(data, dims, [1.0; 3], Unit::Ppb)?;
    Ok(LabeledPhantom {
        chi,
        labels,
        region_table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_shapes_gives_zeros() {
        let mut cfg = ShapeConfig::new([32, 32, 32]);
        cfg.shape_count = (0, 0);
        let v = random_shapes(&cfg).unwrap();
        assert!(v.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn deterministic_per_seed() {
        let mut cfg = ShapeConfig::new([32, 32, 32]);
        cfg.seed = 99;
        let a = random_shapes(&cfg).unwrap();
        let b = random_shapes(&cfg).unwrap();
        assert_eq!(a, b);
        cfg.seed = 100;
        assert_ne!(a, random_shapes(&cfg).unwrap());
    }

    #[test]
    fn single_sphere_single_value() {
        let mut cfg = ShapeConfig::new([32, 32, 32]);
        cfg.shape_count = (1, 1);
        cfg.kinds = vec![ShapeKind::Sphere];
        cfg.susceptibility = (100.0, 100.0);
        let v = random_shapes(&cfg).unwrap();
        assert!(v.data().iter().all(|&x| x == 0.0 || x == 100.0));
        assert!(v.data().contains(&100.0));
    }

    #[test]
    fn values_within_range() {
        for seed in 0..8 {
            let mut cfg = ShapeConfig::new([32, 32, 32]);
            cfg.seed = seed;
            let v = random_shapes(&cfg).unwrap();
            assert!(v
                .data()
                .iter()
                .all(|&x| x == 0.0 || (-300.0..=300.0).contains(&x)));
        }
    }

    #[test]
    fn config_validation() {
        let mut cfg = ShapeConfig::new([16, 16, 16]);
        assert!(cfg.validate().is_err(), "radius 12 sphere cannot fit 16³");
        cfg.kinds = vec![ShapeKind::Cube];
        cfg.cube_edge = (4, 10);
        assert!(cfg.validate().is_ok());
        cfg.shape_count = (3, 2);
        assert!(cfg.validate().is_err());
        cfg.shape_count = (1, 2);
        cfg.susceptibility = (1.0, -1.0);
        assert!(random_shapes(&cfg).is_err());
    }

    #[test]
    fn config_key_values_roundtrip() {
        let mut cfg = ShapeConfig::new([40, 36, 32]);
        cfg.seed = 5;
        cfg.kinds = vec![ShapeKind::Cuboid, ShapeKind::Sphere];
        cfg.susceptibility = (-150.0, 250.5);
        let kv = cfg.to_key_values();
        let back = ShapeConfig::from_key_values(&kv, [1, 1, 1]).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn shepp_logan_regions() {
        let p = shepp_logan([64, 64, 64], SHEPP_LOGAN_PPB).unwrap();
        let vals: Vec<f64> = p.region_table.values().copied().collect();
        assert_eq!(vals, SHEPP_LOGAN_PPB.to_vec());
        for (i, &l) in p.labels.iter().enumerate() {
            let expect = if l == 0 { 0.0 } else { p.region_table[&l] };
            assert_eq!(p.chi.data()[i], expect);
        }
        for l in 1..=6u32 {
            assert!(p.labels.contains(&l), "label {l} missing at 64³");
        }
    }

    #[test]
    fn shepp_logan_zero_values_keep_geometry() {
        let p = shepp_logan([64, 64, 64], [0.0; 6]).unwrap();
        assert!(p.chi.data().iter().all(|&v| v == 0.0));
        assert!(p.labels.contains(&6));
        let back = labels_from_volume(&p.label_volume()).unwrap();
        assert_eq!(back, p.labels);
    }

    #[test]
    fn shepp_logan_too_small() {
        assert!(shepp_logan([16, 64, 64], SHEPP_LOGAN_PPB).is_err());
        assert!(shepp_logan([32, 32, 32], SHEPP_LOGAN_PPB).is_err());
    }

    #[test]
    fn scaling() {
        let p = shepp_logan([48, 48, 48], SHEPP_LOGAN_PPB).unwrap();
        assert_eq!(scale_chi(&p.chi, 1.0), p.chi);
        assert!(scale_chi(&p.chi, 0.0).data().iter().all(|&v| v == 0.0));
        assert_eq!(scale_chi(&p.chi, 2.5).unit(), Unit::Ppb);
    }
}
