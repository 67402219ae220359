use nalgebra::{DMatrix, DVector};

use crate::cohort::{CorrespondenceSet, Volume};
use crate::{Error, Result};

/// Coordinates closer than this to a lattice point are snapped onto it, so
/// exact integer displacements resample without interpolation error.
const SNAP: f64 = 1e-7;

/// 3D thin-plate spline with the biharmonic kernel `U(r) = r`.
#[derive(Clone, Debug)]
pub struct Tps {
    centers: Vec<[f64; 3]>,
    /// `M x 3` kernel weights followed by a `4 x 3` affine block.
    weights: Vec<[f64; 3]>,
    affine: [[f64; 3]; 4],
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

impl Tps {
    /// Interpolating spline mapping each `from[i]` onto `to[i]`.
    pub fn fit(from: &[[f64; 3]], to: &[[f64; 3]]) -> Result<Self> {
        if from.len() != to.len() {
            return Err(Error::Dimension {
                what: "TPS target point count",
                expected: from.len(),
                found: to.len(),
            });
        }
        let m = from.len();
        let scale = from.iter().flat_map(|p| p.iter()).fold(1.0f64, |a, v| a.max(v.abs()));
        for i in 0..m {
            for j in 0..i {
                if dist(from[i], from[j]) <= 1e-9 * scale {
                    return Err(Error::Singular(format!("TPS control points {j} and {i} coincide")));
                }
            }
        }
        let n = m + 4;
        let mut a = DMatrix::<f64>::zeros(n, n);
        for i in 0..m {
            for j in 0..m {
                a[(i, j)] = dist(from[i], from[j]);
            }
            let row = [1.0, from[i][0], from[i][1], from[i][2]];
            for (k, v) in row.into_iter().enumerate() {
                a[(i, m + k)] = v;
                a[(m + k, i)] = v;
            }
        }
        let lu = a.lu();
        let mut weights = vec![[0.0; 3]; m];
        let mut affine = [[0.0; 3]; 4];
        for d in 0..3 {
            let mut rhs = DVector::<f64>::zeros(n);
            for i in 0..m {
                rhs[i] = to[i][d];
            }
            let sol = lu
                .solve(&rhs)
                .filter(|s| s.iter().all(|v| v.is_finite()))
                .ok_or_else(|| Error::Singular("TPS system is singular (degenerate control points)".into()))?;
            for i in 0..m {
                weights[i][d] = sol[i];
            }
            for k in 0..4 {
                affine[k][d] = sol[m + k];
            }
        }
        Ok(Self {
            centers: from.to_vec(),
            weights,
            affine,
        })
    }

    pub fn apply(&self, p: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for d in 0..3 {
            out[d] = self.affine[0][d] + self.affine[1][d] * p[0] + self.affine[2][d] * p[1] + self.affine[3][d] * p[2];
        }
        for (c, w) in self.centers.iter().zip(&self.weights) {
            let r = dist(p, *c);
            for d in 0..3 {
                out[d] += w[d] * r;
            }
        }
        out
    }
}

/// Dense displacement field in voxel units: output voxel `p` samples the
/// input at `p + displacement(p)`.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpField {
    pub dims: [usize; 3],
    pub displacement: Vec<[f64; 3]>,
}

impl WarpField {
    /// Inverse warp for moving a volume whose landmarks sit at `src` so that
    /// they land on `dst`. Coordinates are physical; `spacing` converts to voxels.
    pub fn from_correspondences(
        dims: [usize; 3],
        spacing: f64,
        src: &CorrespondenceSet,
        dst: &CorrespondenceSet,
    ) -> Result<Self> {
        src.ensure_same_len(dst)?;
        let n: usize = dims.iter().product();
        if src.points == dst.points {
            // still reject degenerate control points
            Tps::fit(&dst.points, &src.points)?;
            return Ok(Self {
                dims,
                displacement: vec![[0.0; 3]; n],
            });
        }
        let tps = Tps::fit(&dst.points, &src.points)?;
        let mut displacement = Vec::with_capacity(n);
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    let p = [x as f64 * spacing, y as f64 * spacing, z as f64 * spacing];
                    let q = tps.apply(p);
                    displacement.push([
                        (q[0] - p[0]) / spacing,
                        (q[1] - p[1]) / spacing,
                        (q[2] - p[2]) / spacing,
                    ]);
                }
            }
        }
        Ok(Self { dims, displacement })
    }

    pub fn all_finite(&self) -> bool {
        self.displacement.iter().all(|d| d.iter().all(|v| v.is_finite()))
    }

    pub fn max_magnitude(&self) -> f64 {
        self.displacement
            .iter()
            .map(|d| (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt())
            .fold(0.0, f64::max)
    }

    /// Trilinear inverse-warp resampling with border clamping.
    pub fn apply(&self, vol: &Volume) -> Result<Volume> {
        if vol.dims != self.dims {
            return Err(Error::Dimension {
                what: "volume voxel count for warp",
                expected: self.dims.iter().product(),
                found: vol.len(),
            });
        }
        let snap = |v: f64| {
            let r = v.round();
            if (v - r).abs() < SNAP {
                r
            } else {
                v
            }
        };
        let mut out = Volume::zeros(vol.dims, vol.spacing);
        let mut i = 0;
        for z in 0..self.dims[2] {
            for y in 0..self.dims[1] {
                for x in 0..self.dims[0] {
                    let d = self.displacement[i];
                    let q = [snap(x as f64 + d[0]), snap(y as f64 + d[1]), snap(z as f64 + d[2])];
                    out.data[i] = vol.sample_trilinear(q) as f32;
                    i += 1;
                }
            }
        }
        Ok(out)
    }
}

/// Largest landmark displacement allowed, as a fraction of the largest grid
/// extent.
pub const DEFAULT_MAX_DISPLACEMENT_FRACTION: f64 = 0.25;

/// Warp `vol` (landmarks at `src`) so that its landmarks move to `dst`.
pub fn tps_warp(vol: &Volume, src: &CorrespondenceSet, dst: &CorrespondenceSet) -> Result<Volume> {
    tps_warp_bounded(vol, src, dst, DEFAULT_MAX_DISPLACEMENT_FRACTION)
}

pub fn tps_warp_bounded(
    vol: &Volume,
    src: &CorrespondenceSet,
    dst: &CorrespondenceSet,
    max_fraction: f64,
) -> Result<Volume> {
    src.ensure_same_len(dst)?;
    let extent = vol.extent().into_iter().fold(0.0, f64::max);
    let limit = max_fraction * extent;
    for (i, (a, b)) in src.points.iter().zip(&dst.points).enumerate() {
        let d = dist(*a, *b);
        if d > limit {
            return Err(Error::Config(format!(
                "landmark {i} moves {d:.3}, beyond the allowed {limit:.3} ({max_fraction} of grid extent)"
            )));
        }
    }
    WarpField::from_correspondences(vol.dims, vol.spacing, src, dst)?.apply(vol)
}

/// Move arbitrary points with the spline that carries `from` onto `to`.
pub fn warp_points(points: &[[f64; 3]], from: &CorrespondenceSet, to: &CorrespondenceSet) -> Result<Vec<[f64; 3]>> {
    from.ensure_same_len(to)?;
    let tps = Tps::fit(&from.points, &to.points)?;
    Ok(points.iter().map(|&p| tps.apply(p)).collect())
}
