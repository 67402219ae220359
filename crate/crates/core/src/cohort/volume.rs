use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::shape::ShapeParams;
use crate::{Error, Result};

/// Scalar volume on an isotropic grid, x-fastest. Voxel `(i, j, k)` has its
/// centre at `(i, j, k) * spacing`.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    pub dims: [usize; 3],
    pub spacing: f64,
    pub data: Vec<f32>,
}

impl Volume {
    pub fn zeros(dims: [usize; 3], spacing: f64) -> Self {
        Self {
            dims,
            spacing,
            data: vec![0.0; dims.iter().product()],
        }
    }

    pub fn filled(dims: [usize; 3], spacing: f64, value: f32) -> Self {
        Self {
            dims,
            spacing,
            data: vec![value; dims.iter().product()],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.index(x, y, z)]
    }

    pub fn voxel_center(&self, x: usize, y: usize, z: usize) -> [f64; 3] {
        [x as f64 * self.spacing, y as f64 * self.spacing, z as f64 * self.spacing]
    }

    /// Physical extent of the voxel-centre lattice per axis.
    pub fn extent(&self) -> [f64; 3] {
        self.dims.map(|d| (d.saturating_sub(1)) as f64 * self.spacing)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Trilinear sample at a continuous voxel coordinate; out-of-grid
    /// coordinates are clamped to the border.
    pub fn sample_trilinear(&self, p: [f64; 3]) -> f64 {
        let mut i0 = [0usize; 3];
        let mut frac = [0f64; 3];
        for k in 0..3 {
            let max = (self.dims[k] - 1) as f64;
            let c = p[k].clamp(0.0, max);
            let f = c.floor().min((self.dims[k].max(2) - 2) as f64).max(0.0);
            i0[k] = f as usize;
            frac[k] = if self.dims[k] > 1 { c - f } else { 0.0 };
        }
        let mut acc = 0.0;
        for dz in 0..2 {
            let wz = if dz == 0 { 1.0 - frac[2] } else { frac[2] };
            if wz == 0.0 {
                continue;
            }
            let z = (i0[2] + dz).min(self.dims[2] - 1);
            for dy in 0..2 {
                let wy = if dy == 0 { 1.0 - frac[1] } else { frac[1] };
                if wy == 0.0 {
                    continue;
                }
                let y = (i0[1] + dy).min(self.dims[1] - 1);
                for dx in 0..2 {
                    let wx = if dx == 0 { 1.0 - frac[0] } else { frac[0] };
                    if wx == 0.0 {
                        continue;
                    }
                    let x = (i0[0] + dx).min(self.dims[0] - 1);
                    acc += wz * wy * wx * self.get(x, y, z) as f64;
                }
            }
        }
        acc
    }
}

/// Binary occupancy of the shape, requiring a two-voxel margin to the grid
/// border.
pub fn voxelize(params: &ShapeParams, dims: [usize; 3], spacing: f64) -> Result<Volume> {
    const MARGIN: usize = 2;
    params.validate()?;
    let r = params.max_radius();
    let c = params.pose.translation;
    let lo = [c[0] - r, c[1] - r, c[2] - r];
    let hi = [c[0] + r, c[1] + r, c[2] + r];
    let extent = dims.map(|d| d.saturating_sub(1) as f64 * spacing);
    let m = MARGIN as f64 * spacing;
    if (0..3).any(|k| lo[k] < m || hi[k] > extent[k] - m) {
        return Err(Error::OutOfBounds {
            margin: MARGIN,
            lo,
            hi,
            extent,
        });
    }
    let mut vol = Volume::zeros(dims, spacing);
    let to_idx = |v: f64, k: usize| -> (usize, usize) {
        let a = ((v - r) / spacing).floor().max(0.0) as usize;
        let b = (((v + r) / spacing).ceil() as usize + 1).min(dims[k]);
        (a, b)
    };
    let (x0, x1) = to_idx(c[0], 0);
    let (y0, y1) = to_idx(c[1], 1);
    let (z0, z1) = to_idx(c[2], 2);
    for z in z0..z1 {
        for y in y0..y1 {
            for x in x0..x1 {
                let p = [x as f64 * spacing, y as f64 * spacing, z as f64 * spacing];
                if params.implicit(p) < 1.0 {
                    let i = vol.index(x, y, z);
                    vol.data[i] = 1.0;
                }
            }
        }
    }
    Ok(vol)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextureConfig {
    pub foreground: f32,
    pub background: f32,
    /// Peak amplitude of a linear intensity ramp across the grid.
    pub gradient_amplitude: f32,
    pub blob_count: usize,
    pub blob_intensity: f32,
    /// Gaussian width of each blob, in voxels.
    pub blob_sigma: f64,
}

impl Default for TextureConfig {
    fn default() -> Self {
        Self {
            foreground: 500.0,
            background: 100.0,
            gradient_amplitude: 150.0,
            blob_count: 4,
            blob_intensity: 400.0,
            blob_sigma: 3.0,
        }
    }
}

impl TextureConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.foreground,
            self.background,
            self.gradient_amplitude,
            self.blob_intensity,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite || !(self.blob_sigma > 0.0) || self.gradient_amplitude < 0.0 {
            return Err(Error::Config(format!("invalid texture config {self:?}")));
        }
        Ok(())
    }
}

/// Texture a binary occupancy volume. Returns the textured volume and the
/// blob centres (voxel indices).
pub fn apply_texture(
    occupancy: &Volume,
    cfg: &TextureConfig,
    seed: u64,
) -> Result<(Volume, Vec<[usize; 3]>)> {
    cfg.validate()?;
    if occupancy.data.iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Config("apply_texture expects a binary occupancy volume".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [dx, dy, dz] = occupancy.dims;
    let mut out = occupancy.clone();
    for (o, &occ) in out.data.iter_mut().zip(&occupancy.data) {
        *o = if occ > 0.5 { cfg.foreground } else { cfg.background };
    }

    if cfg.gradient_amplitude > 0.0 {
        let mut dir = [0f64; 3];
        for d in &mut dir {
            *d = StandardNormal.sample(&mut rng);
        }
        let n = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        let half = [dx, dy, dz].map(|d| (d.max(2) - 1) as f64 / 2.0);
        for z in 0..dz {
            for y in 0..dy {
                for x in 0..dx {
                    let rel = [
                        (x as f64 - half[0]) / half[0],
                        (y as f64 - half[1]) / half[1],
                        (z as f64 - half[2]) / half[2],
                    ];
                    let t = (rel[0] * dir[0] + rel[1] * dir[1] + rel[2] * dir[2]) / n / 3f64.sqrt();
                    let i = out.index(x, y, z);
                    out.data[i] += (cfg.gradient_amplitude as f64 * t) as f32;
                }
            }
        }
    }

    let mut centers = Vec::with_capacity(cfg.blob_count);
    let margin = cfg.blob_sigma.ceil() as usize;
    for _ in 0..cfg.blob_count {
        let mut found = None;
        for _ in 0..1000 {
            let c = [dx, dy, dz].map(|d| {
                if d > 2 * margin {
                    rng.gen_range(margin..d - margin)
                } else {
                    rng.gen_range(0..d)
                }
            });
            if occupancy.get(c[0], c[1], c[2]) == 0.0 {
                found = Some(c);
                break;
            }
        }
        let Some(c) = found else { continue };
        centers.push(c);
        let reach = (3.0 * cfg.blob_sigma).ceil() as isize;
        let s2 = 2.0 * cfg.blob_sigma * cfg.blob_sigma;
        for oz in -reach..=reach {
            for oy in -reach..=reach {
                for ox in -reach..=reach {
                    let (x, y, z) = (c[0] as isize + ox, c[1] as isize + oy, c[2] as isize + oz);
                    if x < 0 || y < 0 || z < 0 || x >= dx as isize || y >= dy as isize || z >= dz as isize {
                        continue;
                    }
                    let i = out.index(x as usize, y as usize, z as usize);
                    if occupancy.data[i] > 0.5 {
                        continue;
                    }
                    let r2 = (ox * ox + oy * oy + oz * oz) as f64;
                    out.data[i] += (cfg.blob_intensity as f64 * (-r2 / s2).exp()) as f32;
                }
            }
        }
    }
    Ok((out, centers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::shape::Pose;

    fn unit_ball_params(spacing: f64, dims: usize) -> ShapeParams {
        let c = (dims - 1) as f64 * spacing / 2.0;
        ShapeParams::ellipsoid([1.0; 3], Pose::centered_at([c; 3]))
    }

    #[test]
    fn unit_ball_volume_matches_monte_carlo_estimate() {
        let spacing = 3.0 / 48.0;
        let p = unit_ball_params(spacing, 48);
        let vol = voxelize(&p, [48; 3], spacing).unwrap();
        let occupied: f64 = vol.data.iter().map(|&v| v as f64).sum();
        let estimate = occupied * spacing.powi(3);

        // Monte-Carlo oracle: 10^6 uniform samples in the bounding cube.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let n = 1_000_000;
        let inside = (0..n)
            .filter(|_| {
                let q: [f64; 3] = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
                q.iter().map(|v| v * v).sum::<f64>() < 1.0
            })
            .count();
        let mc = 8.0 * inside as f64 / n as f64;
        assert!((mc - 4.0 / 3.0 * std::f64::consts::PI).abs() < 0.01);
        assert!((estimate - mc).abs() / mc < 0.02, "voxel {estimate} vs mc {mc}");
    }

    #[test]
    fn zero_radius_is_rejected() {
        let mut p = unit_ball_params(1.0, 16);
        p.radii = [0.0, 1.0, 1.0];
        assert!(matches!(voxelize(&p, [16; 3], 1.0), Err(Error::NonPositiveRadius { .. })));
    }

    #[test]
    fn oversized_shape_reports_bounding_box() {
        let p = ShapeParams::ellipsoid([7.0; 3], Pose::centered_at([7.5; 3]));
        let err = voxelize(&p, [16; 3], 1.0).unwrap_err();
        assert!(matches!(err, Error::OutOfBounds { .. }));
        assert!(err.to_string().contains("bounding box"));
    }

    #[test]
    fn voxelize_is_deterministic() {
        let p = ShapeParams::ellipsoid([5.0, 4.0, 3.0], Pose::centered_at([8.0; 3]));
        assert_eq!(voxelize(&p, [17; 3], 1.0).unwrap(), voxelize(&p, [17; 3], 1.0).unwrap());
    }

    fn occupancy() -> Volume {
        let p = ShapeParams::ellipsoid([6.0, 5.0, 4.0], Pose::centered_at([12.0; 3]));
        voxelize(&p, [24; 3], 1.0).unwrap()
    }

    #[test]
    fn degenerate_texture_is_two_valued() {
        let cfg = TextureConfig {
            gradient_amplitude: 0.0,
            blob_count: 0,
            ..TextureConfig::default()
        };
        let occ = occupancy();
        let (tex, _) = apply_texture(&occ, &cfg, 1).unwrap();
        for (t, o) in tex.data.iter().zip(&occ.data) {
            assert_eq!(*t, if *o > 0.5 { cfg.foreground } else { cfg.background });
        }
    }

    #[test]
    fn texture_is_seeded_and_blobs_avoid_the_shape() {
        let occ = occupancy();
        let cfg = TextureConfig::default();
        let (a, centers) = apply_texture(&occ, &cfg, 7).unwrap();
        let (b, _) = apply_texture(&occ, &cfg, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(centers.len(), cfg.blob_count);
        for c in centers {
            assert_eq!(occ.get(c[0], c[1], c[2]), 0.0);
        }
        // interior voxels carry only foreground + ramp: blobs never touch them
        let no_blobs = TextureConfig { blob_count: 0, ..cfg.clone() };
        let (ramp_only, _) = apply_texture(&occ, &no_blobs, 7).unwrap();
        for i in 0..occ.len() {
            if occ.data[i] > 0.5 {
                assert_eq!(a.data[i], ramp_only.data[i]);
            }
        }
    }

    #[test]
    fn trilinear_is_exact_on_grid_and_linear_between() {
        let mut v = Volume::zeros([3, 3, 3], 1.0);
        for z in 0..3 {
            for y in 0..3 {
                for x in 0..3 {
                    let i = v.index(x, y, z);
                    v.data[i] = (x + 2 * y + 3 * z) as f32;
                }
            }
        }
        assert_eq!(v.sample_trilinear([2.0, 1.0, 0.0]), 4.0);
        assert!((v.sample_trilinear([0.5, 1.5, 1.25]) - (0.5 + 3.0 + 3.75)).abs() < 1e-12);
        assert_eq!(v.sample_trilinear([-3.0, 0.0, 0.0]), 0.0);
    }
}
