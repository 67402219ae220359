//! Star-shaped surfaces: a posed ellipsoid whose radius is modulated by a
//! low-order spherical-harmonic expansion. Correspondences are surface points
//! at a fixed set of body-frame anchor directions.

use std::f64::consts::PI;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::harmonics;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupLabel {
    Control,
    Pathology,
}

/// Rigid pose: Euler angles about x, y, z (applied in that order) and the
/// absolute position of the shape centre.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: [f64; 3],
    pub translation: [f64; 3],
}

impl Pose {
    pub fn centered_at(translation: [f64; 3]) -> Self {
        Self {
            rotation: [0.0; 3],
            translation,
        }
    }

    pub fn rotation_matrix(&self) -> Rotation3<f64> {
        let [rx, ry, rz] = self.rotation;
        Rotation3::from_euler_angles(rx, ry, rz)
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapeParams {
    pub radii: [f64; 3],
    /// Coefficients of [`harmonics::basis`].
    pub bump_coeffs: Vec<f64>,
    pub group_label: GroupLabel,
    pub pose: Pose,
}

/// Which coefficient marks pathology, and above which value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathologyRule {
    pub coefficient: usize,
    pub threshold: f64,
}

impl PathologyRule {
    pub fn label(&self, bump_coeffs: &[f64]) -> GroupLabel {
        if bump_coeffs.get(self.coefficient).copied().unwrap_or(0.0) > self.threshold {
            GroupLabel::Pathology
        } else {
            GroupLabel::Control
        }
    }
}

/// Ordered `M x 3` point set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrespondenceSet {
    pub points: Vec<[f64; 3]>,
}

impl CorrespondenceSet {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        Self { points }
    }

    /// Build from a flat `[x0, y0, z0, x1, ...]` vector.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() % 3 != 0 {
            return Err(Error::Dimension {
                what: "flattened correspondences (multiple of 3)",
                expected: flat.len() / 3 * 3,
                found: flat.len(),
            });
        }
        Ok(Self {
            points: flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.points.iter().flat_map(|p| p.iter().copied()).collect()
    }

    pub fn translated(&self, t: [f64; 3]) -> Self {
        Self {
            points: self
                .points
                .iter()
                .map(|p| [p[0] + t[0], p[1] + t[1], p[2] + t[2]])
                .collect(),
        }
    }

    pub fn ensure_same_len(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Dimension {
                what: "correspondence count",
                expected: self.len(),
                found: other.len(),
            });
        }
        Ok(())
    }
}

/// Fixed anchor directions `(theta, phi)` on a Fibonacci lattice.
pub fn anchor_angles(m: usize) -> Vec<(f64, f64)> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..m)
        .map(|i| {
            let z = 1.0 - (2 * i + 1) as f64 / m as f64;
            let phi = (i as f64 * golden).rem_euclid(2.0 * PI);
            (z.clamp(-1.0, 1.0).acos(), phi)
        })
        .collect()
}

pub fn direction(theta: f64, phi: f64) -> Vector3<f64> {
    Vector3::new(theta.sin() * phi.cos(), theta.sin() * phi.sin(), theta.cos())
}

/// Angles of a body-frame direction.
pub fn angles_of(u: &Vector3<f64>) -> (f64, f64) {
    let n = u.norm();
    let theta = (u.z / n).clamp(-1.0, 1.0).acos();
    let phi = u.y.atan2(u.x).rem_euclid(2.0 * PI);
    (theta, phi)
}

impl ShapeParams {
    /// Sphere-like shape with no harmonic deformation.
    pub fn ellipsoid(radii: [f64; 3], pose: Pose) -> Self {
        Self {
            radii,
            bump_coeffs: vec![0.0; harmonics::basis_len()],
            group_label: GroupLabel::Control,
            pose,
        }
    }

    /// Radius of the undeformed ellipsoid along body-frame unit direction `u`.
    fn ellipsoid_radius(&self, u: &Vector3<f64>) -> f64 {
        let [a, b, c] = self.radii;
        1.0 / ((u.x / a).powi(2) + (u.y / b).powi(2) + (u.z / c).powi(2)).sqrt()
    }

    /// `1 + sum c_lm Y_lm`.
    fn modulation(&self, theta: f64, phi: f64) -> f64 {
        1.0 + harmonics::evaluate_all(theta, phi)
            .iter()
            .zip(&self.bump_coeffs)
            .map(|(y, c)| y * c)
            .sum::<f64>()
    }

    /// Surface radius along body-frame angles.
    pub fn radius(&self, theta: f64, phi: f64) -> f64 {
        self.ellipsoid_radius(&direction(theta, phi)) * self.modulation(theta, phi)
    }

    /// Check radii and that the deformed radius stays positive on a dense
    /// angular lattice.
    pub fn validate(&self) -> Result<()> {
        for (i, &r) in self.radii.iter().enumerate() {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::NonPositiveRadius {
                    detail: format!("radii[{i}] = {r}"),
                });
            }
        }
        if self.bump_coeffs.len() != harmonics::basis_len() {
            return Err(Error::Dimension {
                what: "bump coefficient count",
                expected: harmonics::basis_len(),
                found: self.bump_coeffs.len(),
            });
        }
        let basis = harmonics::basis();
        let mut worst = (f64::INFINITY, 0.0, 0.0);
        for (theta, phi) in anchor_angles(4096) {
            let m = self.modulation(theta, phi);
            if m < worst.0 {
                worst = (m, theta, phi);
            }
        }
        let (m, theta, phi) = worst;
        if m <= 0.0 {
            let ys = harmonics::evaluate_all(theta, phi);
            let (idx, contrib) = ys
                .iter()
                .zip(&self.bump_coeffs)
                .map(|(y, c)| y * c)
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("non-empty basis");
            let (l, mm) = basis[idx];
            return Err(Error::NonPositiveRadius {
                detail: format!(
                    "bump_coeffs[{idx}] (l={l}, m={mm}) = {} contributes {contrib:.4} at theta={theta:.3}, phi={phi:.3}; modulation {m:.4}",
                    self.bump_coeffs[idx]
                ),
            });
        }
        Ok(())
    }

    /// World-space point on the surface along body-frame angles.
    pub fn surface_point(&self, theta: f64, phi: f64) -> [f64; 3] {
        let u = direction(theta, phi);
        let local = u * self.radius(theta, phi);
        let p = self.pose.rotation_matrix() * local + self.pose.center();
        [p.x, p.y, p.z]
    }

    /// Largest surface radius over a dense lattice (upper bound for margins).
    pub fn max_radius(&self) -> f64 {
        anchor_angles(4096)
            .into_iter()
            .map(|(t, p)| self.radius(t, p))
            .fold(0.0, f64::max)
    }

    /// Signed inside test for a world-space point: `< 1` inside.
    pub fn implicit(&self, p: [f64; 3]) -> f64 {
        let local = self.pose.rotation_matrix().inverse() * (Vector3::from(p) - self.pose.center());
        let d = local.norm();
        if d == 0.0 {
            return 0.0;
        }
        let (theta, phi) = angles_of(&local);
        d / self.radius(theta, phi)
    }
}

/// Correspondences at the `m` fixed anchors.
pub fn generate_shape(params: &ShapeParams, m: usize) -> Result<CorrespondenceSet> {
    params.validate()?;
    Ok(CorrespondenceSet::new(
        anchor_angles(m)
            .into_iter()
            .map(|(t, p)| params.surface_point(t, p))
            .collect(),
    ))
}
