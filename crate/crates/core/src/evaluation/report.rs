use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::downstream::DownstreamResult;
use super::group::GroupDifference;
use super::metrics::{per_point_rmse, rmse_eq8};
use super::surface::{surface_distance, SurfaceDistance};
use crate::cohort::{CorrespondenceSet, GroundTruthSample, GroupLabel};
use crate::error::{format_err, io_err};
use crate::{Error, Result};

pub const EVAL_REPORT_FILE: &str = "eval_report.json";
pub const GROUPDIFF_FILE: &str = "groupdiff.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleEval {
    pub id: String,
    pub group: GroupLabel,
    pub rmse_eq8: f64,
    pub surface_distance: f64,
    pub chamfer: f64,
    pub per_point_rmse: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub mean_rmse_eq8: f64,
    pub median_rmse_eq8: f64,
    pub mean_surface_distance: f64,
    pub median_surface_distance: f64,
    /// Sample IDs ranked by surface distance.
    pub best: String,
    pub median: String,
    pub worst: String,
    pub downstream: Option<DownstreamResult>,
    pub samples: Vec<SampleEval>,
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Score predictions against their ground-truth samples.
pub fn evaluate_predictions(
    samples: &[&GroundTruthSample],
    preds: &[CorrespondenceSet],
    n_surface_pts: usize,
) -> Result<(EvalReport, Vec<SurfaceDistance>)> {
    if samples.is_empty() || samples.len() != preds.len() {
        return Err(Error::Dimension {
            what: "predictions for evaluation",
            expected: samples.len(),
            found: preds.len(),
        });
    }
    let mut evals = Vec::with_capacity(samples.len());
    let mut surfaces = Vec::with_capacity(samples.len());
    for (s, p) in samples.iter().zip(preds) {
        let sd = surface_distance(p, s, n_surface_pts)?;
        evals.push(SampleEval {
            id: s.id.clone(),
            group: s.group,
            rmse_eq8: rmse_eq8(p, &s.correspondences)?,
            surface_distance: sd.mean,
            chamfer: sd.chamfer,
            per_point_rmse: per_point_rmse(p, &s.correspondences)?,
        });
        surfaces.push(sd);
    }
    let rmse: Vec<f64> = evals.iter().map(|e| e.rmse_eq8).collect();
    let sdist: Vec<f64> = evals.iter().map(|e| e.surface_distance).collect();
    let mut order: Vec<usize> = (0..evals.len()).collect();
    order.sort_by(|&a, &b| sdist[a].total_cmp(&sdist[b]).then(a.cmp(&b)));
    let n = evals.len() as f64;
    let report = EvalReport {
        n_samples: evals.len(),
        mean_rmse_eq8: rmse.iter().sum::<f64>() / n,
        median_rmse_eq8: median(&rmse),
        mean_surface_distance: sdist.iter().sum::<f64>() / n,
        median_surface_distance: median(&sdist),
        best: evals[order[0]].id.clone(),
        median: evals[order[(order.len() - 1) / 2]].id.clone(),
        worst: evals[order[order.len() - 1]].id.clone(),
        downstream: None,
        samples: evals,
    };
    Ok((report, surfaces))
}

impl EvalReport {
    pub fn sample(&self, id: &str) -> Option<&SampleEval> {
        self.samples.iter().find(|s| s.id == id)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join(EVAL_REPORT_FILE);
        let json = serde_json::to_string_pretty(self).map_err(format_err(&path))?;
        fs::write(&path, json).map_err(io_err(&path))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(EVAL_REPORT_FILE);
        let text = fs::read_to_string(&path).map_err(io_err(&path))?;
        serde_json::from_str(&text).map_err(format_err(&path))
    }
}

pub fn heatmap_csv(surface: &SurfaceDistance) -> String {
    let mut s = String::from("x,y,z,distance\n");
    for (p, d) in surface.points.iter().zip(&surface.per_vertex) {
        let _ = writeln!(s, "{},{},{},{}", p[0], p[1], p[2], d);
    }
    s
}

/// `heatmap_<id>.csv` for every evaluated sample.
pub fn write_heatmaps(dir: &Path, report: &EvalReport, surfaces: &[SurfaceDistance]) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (s, surf) in report.samples.iter().zip(surfaces) {
        let path = dir.join(format!("heatmap_{}.csv", s.id));
        fs::write(&path, heatmap_csv(surf)).map_err(io_err(&path))?;
    }
    Ok(())
}

pub fn group_difference_csv(gd: &GroupDifference) -> String {
    let mut s = String::from("point,ref_x,ref_y,ref_z,dx,dy,dz,normalized_magnitude\n");
    for (i, ((r, v), m)) in gd.reference.iter().zip(&gd.vectors).zip(&gd.normalized_magnitude).enumerate() {
        let _ = writeln!(s, "{i},{},{},{},{},{},{},{}", r[0], r[1], r[2], v[0], v[1], v[2], m);
    }
    s
}

pub fn write_group_difference(dir: &Path, gd: &GroupDifference) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(GROUPDIFF_FILE);
    fs::write(&path, group_difference_csv(gd)).map_err(io_err(&path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{generate_shape, Pose, ShapeParams, Split, Volume};

    fn sample(id: &str, r: f64) -> GroundTruthSample {
        let params = ShapeParams::ellipsoid([r, r, r * 0.8], Pose::centered_at([20.0; 3]));
        GroundTruthSample {
            id: id.into(),
            correspondences: generate_shape(&params, 32).unwrap(),
            params: Some(params),
            volume: Volume::zeros([1; 3], 1.0),
            group: GroupLabel::Control,
            split: Split::Test,
            augmented: false,
            kde_scores: None,
        }
    }

    #[test]
    fn ranks_and_round_trips() {
        let samples = [sample("a", 8.0), sample("b", 9.0), sample("c", 7.0)];
        let refs: Vec<&GroundTruthSample> = samples.iter().collect();
        let preds = vec![
            samples[0].correspondences.translated([0.5, 0.0, 0.0]),
            samples[1].correspondences.translated([2.0, 0.0, 0.0]),
            samples[2].correspondences.clone(),
        ];
        let (report, surfaces) = evaluate_predictions(&refs, &preds, 200).unwrap();
        assert_eq!((report.best.as_str(), report.median.as_str(), report.worst.as_str()), ("c", "a", "b"));
        let by_id = |id: &str| report.sample(id).unwrap().surface_distance;
        assert!(by_id(&report.best) <= by_id(&report.median) && by_id(&report.median) <= by_id(&report.worst));
        let dir = tempfile::tempdir().unwrap();
        report.save(dir.path()).unwrap();
        assert_eq!(EvalReport::load(dir.path()).unwrap(), report);
        write_heatmaps(dir.path(), &report, &surfaces).unwrap();
        let text = fs::read_to_string(dir.path().join("heatmap_b.csv")).unwrap();
        assert_eq!(text.lines().count(), 201);
    }
}
