use crate::cohort::CorrespondenceSet;
use crate::Result;

/// Mean of the per-axis RMSEs: `(RMSE_x + RMSE_y + RMSE_z) / 3`.
pub fn rmse_eq8(pred: &CorrespondenceSet, gt: &CorrespondenceSet) -> Result<f64> {
    pred.ensure_same_len(gt)?;
    let n = pred.len() as f64;
    let mut total = 0.0;
    for axis in 0..3 {
        let se: f64 = pred.points.iter().zip(&gt.points).map(|(p, g)| (p[axis] - g[axis]).powi(2)).sum();
        total += (se / n).sqrt();
    }
    Ok(total / 3.0)
}

/// `sqrt(|p_i - g_i|^2 / 3)` for every correspondence.
pub fn per_point_rmse(pred: &CorrespondenceSet, gt: &CorrespondenceSet) -> Result<Vec<f64>> {
    pred.ensure_same_len(gt)?;
    Ok(pred
        .points
        .iter()
        .zip(&gt.points)
        .map(|(p, g)| (((p[0] - g[0]).powi(2) + (p[1] - g[1]).powi(2) + (p[2] - g[2]).powi(2)) / 3.0).sqrt())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::rmse_loss;

    #[test]
    fn worked_examples() {
        let gt = CorrespondenceSet::new(vec![[0.0; 3], [0.0; 3]]);
        assert_eq!(rmse_eq8(&gt, &gt).unwrap(), 0.0);
        let pred = CorrespondenceSet::new(vec![[3.0, 0.0, 0.0], [4.0, 0.0, 0.0]]);
        assert!((rmse_eq8(&pred, &gt).unwrap() - (12.5f64).sqrt() / 3.0).abs() < 1e-12);
        let one = CorrespondenceSet::new(vec![[1.0, 2.0, 2.0]]);
        let origin = CorrespondenceSet::new(vec![[0.0; 3]]);
        assert!((per_point_rmse(&one, &origin).unwrap()[0] - 3f64.sqrt()).abs() < 1e-12);
        assert!(rmse_eq8(&one, &gt).is_err());
    }

    #[test]
    fn coincides_with_rmse_loss_for_uniform_error() {
        let gt = CorrespondenceSet::new(vec![[0.5, 1.0, -2.0], [3.0, 0.0, 1.0], [1.0, 1.0, 1.0]]);
        let pred = gt.translated([1.0, 1.0, 1.0]);
        let a = rmse_eq8(&pred, &gt).unwrap();
        let b = rmse_loss(&pred.flatten(), &gt.flatten()).unwrap();
        assert!((a - b).abs() < 1e-12);
        let skew = gt.translated([3.0, 0.0, 0.0]);
        assert!(rmse_eq8(&skew, &gt).unwrap() < rmse_loss(&skew.flatten(), &gt.flatten()).unwrap());
    }
}
