use crate::cohort::harmonics;
use crate::cohort::shape::anchor_angles;
use crate::cohort::CorrespondenceSet;
use crate::{Error, Result};

/// Per-correspondence difference of group means.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupDifference {
    /// `mean_g1 - mean_g2` at each correspondence.
    pub vectors: Vec<[f64; 3]>,
    /// Vector magnitudes divided by the largest magnitude (all zero when the
    /// means coincide).
    pub normalized_magnitude: Vec<f64>,
    /// Mean of both groups pooled, for overlay.
    pub reference: Vec<[f64; 3]>,
}

impl GroupDifference {
    pub fn argmax(&self) -> usize {
        self.normalized_magnitude
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0)
    }
}

fn mean_shape(sets: &[&CorrespondenceSet]) -> Vec<[f64; 3]> {
    let m = sets[0].len();
    let mut out = vec![[0.0; 3]; m];
    for s in sets {
        for (o, p) in out.iter_mut().zip(&s.points) {
            for k in 0..3 {
                o[k] += p[k] / sets.len() as f64;
            }
        }
    }
    out
}

pub fn group_difference(g1: &[&CorrespondenceSet], g2: &[&CorrespondenceSet]) -> Result<GroupDifference> {
    if g1.is_empty() || g2.is_empty() {
        return Err(Error::TooFew {
            what: "shapes in each group",
            needed: 1,
            got: g1.len().min(g2.len()),
        });
    }
    for s in g1.iter().chain(g2).skip(1) {
        g1[0].ensure_same_len(s)?;
    }
    let (m1, m2) = (mean_shape(g1), mean_shape(g2));
    let vectors: Vec<[f64; 3]> = m1.iter().zip(&m2).map(|(a, b)| [a[0] - b[0], a[1] - b[1], a[2] - b[2]]).collect();
    let mags: Vec<f64> = vectors.iter().map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()).collect();
    let max = mags.iter().copied().fold(0.0, f64::max);
    let normalized_magnitude = mags.iter().map(|m| if max > 0.0 { m / max } else { 0.0 }).collect();
    let all: Vec<&CorrespondenceSet> = g1.iter().chain(g2).copied().collect();
    Ok(GroupDifference {
        vectors,
        normalized_magnitude,
        reference: mean_shape(&all),
    })
}

/// Anchor indices where the harmonic `coefficient` reaches at least
/// `fraction` of its peak magnitude over the `m` anchors.
pub fn support_region(coefficient: usize, m: usize, fraction: f64) -> Vec<usize> {
    let (l, mm) = harmonics::basis()[coefficient];
    let values: Vec<f64> = anchor_angles(m)
        .into_iter()
        .map(|(t, p)| harmonics::real_sh(l, mm, t, p).abs())
        .collect();
    let peak = values.iter().copied().fold(0.0, f64::max);
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= fraction * peak)
        .map(|(i, _)| i)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(seed: f64) -> CorrespondenceSet {
        CorrespondenceSet::new((0..6).map(|i| [i as f64 * seed, seed.sin(), -(i as f64)]).collect())
    }

    #[test]
    fn identical_groups_and_antisymmetry() {
        let (a, b, c) = (set(1.0), set(2.0), set(3.0));
        let same = group_difference(&[&a, &b], &[&a, &b]).unwrap();
        assert!(same.vectors.iter().all(|v| *v == [0.0; 3]));
        assert!(same.normalized_magnitude.iter().all(|&v| v == 0.0));
        let d = group_difference(&[&a], &[&b, &c]).unwrap();
        let r = group_difference(&[&b, &c], &[&a]).unwrap();
        for (x, y) in d.vectors.iter().zip(&r.vectors) {
            for k in 0..3 {
                assert_eq!(x[k], -y[k]);
            }
        }
        assert!(d.normalized_magnitude.iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert!(group_difference(&[], &[&a]).is_err());
    }

    #[test]
    fn scaling_shapes_scales_differences() {
        let (a, b) = (set(1.0), set(2.5));
        let s = 3.0;
        let scale = |c: &CorrespondenceSet| CorrespondenceSet::new(c.points.iter().map(|p| p.map(|v| v * s)).collect());
        let d = group_difference(&[&a], &[&b]).unwrap();
        let ds = group_difference(&[&scale(&a)], &[&scale(&b)]).unwrap();
        for (x, y) in d.vectors.iter().zip(&ds.vectors) {
            for k in 0..3 {
                assert!((y[k] - s * x[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn support_of_zonal_harmonic_is_polar() {
        let idx = harmonics::basis_index(2, 0).unwrap();
        let region = support_region(idx, 128, 0.7);
        assert!(!region.is_empty());
        for (i, (theta, _)) in anchor_angles(128).into_iter().enumerate() {
            let c2 = theta.cos().powi(2);
            if region.contains(&i) {
                assert!(c2 >= 0.75, "anchor {i}");
            } else {
                assert!(c2 < 0.85, "anchor {i}");
            }
        }
    }
}
