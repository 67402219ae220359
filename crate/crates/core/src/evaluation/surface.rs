use crate::cohort::{generate_shape, CorrespondenceSet, GroundTruthSample};
use crate::shape_space::warp_points;
use crate::{Error, Result};

/// Surface comparison for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceDistance {
    /// Mean distance between each dense ground-truth surface point and its
    /// image on the predicted surface.
    pub mean: f64,
    /// Per-surface-point distances (same order as `points`).
    pub per_vertex: Vec<f64>,
    /// Dense ground-truth surface points.
    pub points: Vec<[f64; 3]>,
    /// Symmetric mean nearest-neighbour distance between the two point sets.
    pub chamfer: f64,
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

fn mean_nearest(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    from.iter()
        .map(|&p| to.iter().map(|&q| dist(p, q)).fold(f64::INFINITY, f64::min))
        .sum::<f64>()
        / from.len() as f64
}

/// Symmetric mean point-to-nearest-point distance.
pub fn chamfer_distance(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    0.5 * (mean_nearest(a, b) + mean_nearest(b, a))
}

/// Compare a prediction against the analytic ground-truth surface. The
/// predicted surface is the dense ground-truth surface carried through the
/// thin-plate spline that moves the true correspondences onto `pred`.
pub fn surface_distance(pred: &CorrespondenceSet, gt: &GroundTruthSample, n_surface_pts: usize) -> Result<SurfaceDistance> {
    let params = gt.params.as_ref().ok_or_else(|| {
        Error::Config(format!("sample {} has no generating parameters for surface sampling", gt.id))
    })?;
    let dense = generate_shape(params, n_surface_pts)?.points;
    surface_distance_from_points(pred, &gt.correspondences, &dense)
}

pub fn surface_distance_from_points(
    pred: &CorrespondenceSet,
    gt: &CorrespondenceSet,
    dense: &[[f64; 3]],
) -> Result<SurfaceDistance> {
    if dense.is_empty() {
        return Err(Error::TooFew {
            what: "surface points",
            needed: 1,
            got: 0,
        });
    }
    let warped = warp_points(dense, gt, pred)?;
    let per_vertex: Vec<f64> = dense.iter().zip(&warped).map(|(&a, &b)| dist(a, b)).collect();
    let mean = per_vertex.iter().sum::<f64>() / per_vertex.len() as f64;
    Ok(SurfaceDistance {
        mean,
        per_vertex,
        points: dense.to_vec(),
        chamfer: chamfer_distance(dense, &warped),
    })
}
